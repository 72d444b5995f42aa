"""
Tests for the typed settings built from the project configuration file.
"""
from dataclasses import replace

import pytest
import yaml

from cyclic_nsf.config_loader import load_config
from cyclic_nsf.errors import ConfigurationError
from cyclic_nsf.settings import Settings
from cyclic_nsf.source_module import REFERENCE_BETAS
from cyclic_nsf.toy_nsf import SourceType


@pytest.fixture
def project_settings(project_root, monkeypatch):
    monkeypatch.delenv("NSF_MAX_STEPS", raising=False)
    return Settings.from_config(load_config(project_root / "config.yaml"))


@pytest.mark.unit
class TestSettings:

    def test_project_config(self, project_settings):
        assert project_settings.train.row == "Cno_b2"
        assert project_settings.train.beta == REFERENCE_BETAS[1]
        assert project_settings.train.max_steps == 500
        assert project_settings.loss.eta == 1e-5
        assert project_settings.source.harmonics == 8
        assert project_settings.logging == {"level": "INFO", "directory": "logs"}

    def test_defaults_match_project_config(self, project_settings):
        defaults = Settings()
        assert project_settings.loss == defaults.loss
        assert project_settings.source == replace(defaults.source, seed=0)
        assert project_settings.dataset == defaults.dataset

    def test_dump_round_trip(self, project_settings):
        again = Settings.from_config(yaml.safe_load(project_settings.dump()))
        assert again == project_settings

    def test_training_model_config(self, config_file):
        config = load_config(config_file("source: {harmonics: 3}\ntrain: {row: Sin, channels: 4}\n"))
        model_cfg = Settings.from_config(config).training_model_config()
        assert model_cfg.source_type is SourceType.SIN
        assert model_cfg.channels == 4
        assert model_cfg.source.harmonics == 3

    @pytest.mark.parametrize("text", [
        "vocoder: {}\n",
        "logging: {colour: true}\n",
        "model: {channel: 3}\n",
        "train: {row: Table9}\n",
        "source: [1, 2]\n",
    ])
    def test_invalid(self, config_file, text):
        with pytest.raises(ConfigurationError):
            Settings.from_config(load_config(config_file(text)))
