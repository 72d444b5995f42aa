"""
Typed view of a loaded configuration file.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict

import yaml

from .config_loader import CONFIG_VERSION, check_keys, section
from .dataset import DatasetConfig
from .losses import LossConfig
from .source_module import SourceConfig
from .toy_nsf import ModelConfig
from .training import TrainConfig

SECTIONS = ("version", "source", "loss", "model", "train", "dataset", "logging")
LOGGING_KEYS = ("level", "directory")


@dataclass(frozen=True)
class Settings:
    source: SourceConfig = field(default_factory=SourceConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    logging: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "Settings":
        check_keys(config, SECTIONS, "configuration")
        source = SourceConfig.from_dict(section(config, "source"))
        model = ModelConfig.from_dict({**section(config, "model"), "source": source})
        check_keys(section(config, "logging"), LOGGING_KEYS, "logging config")
        return cls(
            source=source,
            loss=LossConfig.from_dict(section(config, "loss")),
            model=model,
            train=TrainConfig.from_dict(section(config, "train")),
            dataset=DatasetConfig.from_dict(section(config, "dataset")),
            logging=dict(section(config, "logging")),
        )

    def training_model_config(self) -> ModelConfig:
        return self.train.model_config(replace(self.model, source=self.source))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": CONFIG_VERSION,
            "source": self.source.to_dict(),
            "loss": self.loss.to_dict(),
            "model": {k: v for k, v in self.model.to_dict().items() if k != "source"},
            "train": self.train.to_dict(),
            "dataset": self.dataset.to_dict(),
            "logging": dict(self.logging),
        }

    def dump(self) -> str:
        """YAML echo of the fully resolved configuration."""
        return yaml.safe_dump(self.to_dict(), sort_keys=False)
