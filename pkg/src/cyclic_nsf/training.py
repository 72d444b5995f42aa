"""
ADAM training of the toy NSF on the synthetic corpus, with per-epoch
validation and best-epoch selection, plus the named model-row presets.
"""
import copy
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch

from .config_loader import check_keys
from .dataset import SyntheticDataset, Utterance
from .errors import ConfigurationError, DivergenceError, InputValidationError
from .logging_config import get_logger
from .losses import LossConfig, LossReport, build_sine_mask, total_training_loss
from .source_module import BETA_PRIOR, REFERENCE_BETAS
from .toy_nsf import ModelConfig, SourceType, ToyNsfModel, backward, condition_inputs, resolve_dtype

logger = get_logger(__name__)

VALIDATION_SEED_OFFSET = 7919


class BetaMode(str, Enum):
    FIXED = "fixed"
    TRAINABLE = "trainable"


MODEL_ROWS: Dict[str, dict] = {
    "Sin": {"source_type": "sin", "beta_mode": "fixed", "mask_loss": False},
    "Pul": {"source_type": "pul", "beta_mode": "fixed", "mask_loss": False},
    "Rno": {"source_type": "rno", "beta_mode": "fixed", "mask_loss": True},
    "Cno_b1": {"source_type": "cno", "beta_mode": "fixed", "beta": REFERENCE_BETAS[0], "mask_loss": True},
    "Cno_b2": {"source_type": "cno", "beta_mode": "fixed", "beta": REFERENCE_BETAS[1], "mask_loss": True},
    "Cno_b3": {"source_type": "cno", "beta_mode": "fixed", "beta": REFERENCE_BETAS[2], "mask_loss": True},
    "Cno_btr": {"source_type": "cno", "beta_mode": "trainable", "beta": BETA_PRIOR, "mask_loss": True},
    "Rno_noMask": {"source_type": "rno", "beta_mode": "fixed", "mask_loss": False},
    "Cno_noMask": {"source_type": "cno", "beta_mode": "fixed", "beta": REFERENCE_BETAS[1],
                   "mask_loss": False},
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 100
    max_steps: Optional[int] = None
    batch_length: Optional[int] = None
    source_type: SourceType = SourceType.CNO
    beta_mode: BetaMode = BetaMode.FIXED
    beta: float = BETA_PRIOR
    mask_loss: bool = True
    seed: int = 0
    channels: int = 16
    dtype: str = "float32"
    single_threaded: bool = True
    row: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "source_type", SourceType(self.source_type))
        object.__setattr__(self, "beta_mode", BetaMode(self.beta_mode))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ConfigurationError(f"adam_betas must be two values in [0, 1), got {self.adam_betas}")
        if self.adam_eps <= 0:
            raise ConfigurationError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.batch_length is not None and self.batch_length < 1:
            raise ConfigurationError(f"batch_length must be >= 1, got {self.batch_length}")
        if self.beta <= 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if self.row is not None and self.row not in MODEL_ROWS:
            raise ConfigurationError(f"unknown model row '{self.row}', expected one of {list(MODEL_ROWS)}")
        resolve_dtype(self.dtype)

    @classmethod
    def for_row(cls, row: str, **overrides) -> "TrainConfig":
        """Preset for one named model row; keyword arguments override it."""
        if row not in MODEL_ROWS:
            raise ConfigurationError(f"unknown model row '{row}', expected one of {list(MODEL_ROWS)}")
        return cls(**{**MODEL_ROWS[row], **overrides, "row": row})

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        check_keys(values, cls.__dataclass_fields__, "train config")
        values = dict(values)
        row = values.pop("row", None)
        if row is not None:
            return cls.for_row(row, **values)
        return cls(**values)

    def model_config(self, base: ModelConfig) -> ModelConfig:
        """The architecture in `base` with this run's source, beta, width and dtype."""
        return replace(base, source_type=self.source_type, beta=self.beta,
                       trainable_beta=self.beta_mode is BetaMode.TRAINABLE,
                       channels=self.channels, dtype=self.dtype, init_seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "epochs": self.epochs,
            "max_steps": self.max_steps,
            "batch_length": self.batch_length,
            "source_type": self.source_type.value,
            "beta_mode": self.beta_mode.value,
            "beta": self.beta,
            "mask_loss": self.mask_loss,
            "seed": self.seed,
            "channels": self.channels,
            "dtype": self.dtype,
            "single_threaded": self.single_threaded,
            "row": self.row,
        }


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float
    steps: int
    beta: float


@dataclass
class TrainingLog:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    @property
    def steps(self) -> int:
        return self.epochs[-1].steps if self.epochs else 0

    def to_columns(self) -> Dict[str, list]:
        return {
            "epoch": [r.epoch for r in self.epochs],
            "train_loss": [r.train_loss for r in self.epochs],
            "validation_loss": [r.validation_loss for r in self.epochs],
            "steps": [r.steps for r in self.epochs],
            "beta": [r.beta for r in self.epochs],
        }


@dataclass
class TrainingResult:
    model: ToyNsfModel
    log: TrainingLog


def select_best_epoch(log: Union[TrainingLog, Sequence[EpochRecord]]) -> int:
    """Epoch with the lowest validation loss; the earliest one wins ties."""
    records = log.epochs if isinstance(log, TrainingLog) else list(log)
    candidates = [r for r in records if math.isfinite(r.validation_loss)]
    if not candidates:
        raise InputValidationError("training log has no epoch with a finite validation loss")
    return min(candidates, key=lambda r: r.validation_loss).epoch


def feature_stats(utterances: Sequence[Utterance]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-dimension mean and std of the condition-net inputs over all frames."""
    if not utterances:
        raise InputValidationError("cannot compute feature statistics of an empty set")
    frames = torch.cat([condition_inputs(u.f0.values, u.features.frames.to(torch.float64))
                        for u in utterances])
    return frames.mean(dim=0), frames.std(dim=0, unbiased=False)


def crop(utterance: Utterance, batch_length: Optional[int], frame_samples: int,
         rng: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Frame-aligned random excerpt: (F0 frames, feature frames, target samples)."""
    num_frames = utterance.num_frames
    frames = num_frames if batch_length is None else max(1, batch_length // frame_samples)
    start = 0
    if frames < num_frames:
        start = int(torch.randint(0, num_frames - frames + 1, (1,), generator=rng))
    else:
        frames = num_frames
    f0 = utterance.f0.values[start:start + frames]
    features = utterance.features.frames[start:start + frames]
    target = utterance.waveform.samples[start * frame_samples:(start + frames) * frame_samples]
    return f0, features, target


def _mask_source(model: ToyNsfModel, loss_cfg: LossConfig):
    return replace(model.config.source, harmonics=loss_cfg.mask_harmonics)


def compute_loss(model: ToyNsfModel, f0: torch.Tensor, features: torch.Tensor, target: torch.Tensor,
                 mask_loss: bool, loss_cfg: LossConfig, rng: torch.Generator) -> LossReport:
    """Forward pass plus the training loss; the mask is drawn after the model's noise."""
    output = model(f0, features, rng)
    mask = build_sine_mask(output.f0_upsampled, _mask_source(model, loss_cfg), rng) if mask_loss else None
    return total_training_loss(output, target.to(model.dtype), mask, loss_cfg, model.trainable_beta())


def training_step(model: ToyNsfModel, optimizer: torch.optim.Optimizer, utterance: Utterance,
                  cfg: TrainConfig, loss_cfg: LossConfig, rng: torch.Generator) -> LossReport:
    f0, features, target = crop(utterance, cfg.batch_length, model.frame_samples, rng)
    report = compute_loss(model, f0, features, target, cfg.mask_loss, loss_cfg, rng)
    if not math.isfinite(report.value):
        raise DivergenceError(f"non-finite training loss on {utterance.name}: {report.to_dict()}")
    grads = backward(model, report)
    optimizer.zero_grad()
    for name, param in model.named_parameters():
        if name in grads:
            param.grad = grads[name]
    optimizer.step()
    return report


def evaluate(model: ToyNsfModel, utterances: Sequence[Utterance], cfg: TrainConfig,
             loss_cfg: LossConfig) -> float:
    """Mean total loss (masked loss included when enabled) with fixed noise."""
    rng = torch.Generator()
    rng.manual_seed(cfg.seed + VALIDATION_SEED_OFFSET)
    with torch.no_grad():
        losses = [compute_loss(model, u.f0.values, u.features.frames, u.waveform.samples,
                               cfg.mask_loss, loss_cfg, rng).value for u in utterances]
    return sum(losses) / len(losses)


def make_optimizer(model: ToyNsfModel, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam([p for p in model.parameters() if p.requires_grad],
                            lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps)


def prepare_model(model: ToyNsfModel, dataset: SyntheticDataset) -> None:
    mean, std = feature_stats(dataset.train)
    with torch.no_grad():
        model.condition_net.set_feature_stats(mean, std)


def train(model: ToyNsfModel, dataset: SyntheticDataset, cfg: TrainConfig,
          loss_cfg: Optional[LossConfig] = None) -> TrainingResult:
    """
    Train with ADAM for `cfg.epochs` epochs (or until `cfg.max_steps`), one
    utterance per step. Validation loss is computed after every epoch and the
    parameters of the best epoch are restored at the end.
    """
    loss_cfg = loss_cfg or LossConfig()
    if not dataset.train:
        raise InputValidationError("training set is empty")
    if not dataset.validation:
        raise InputValidationError("validation set is empty")
    if cfg.single_threaded:
        torch.set_num_threads(1)

    prepare_model(model, dataset)
    optimizer = make_optimizer(model, cfg)
    rng = torch.Generator()
    rng.manual_seed(cfg.seed)
    order_rng = torch.Generator()
    order_rng.manual_seed(cfg.seed)

    log = TrainingLog()
    best_loss = math.inf
    best_state = copy.deepcopy(model.state_dict())
    steps = 0
    logger.info(f"Training {model.config.source_type.value} model for up to {cfg.epochs} epochs"
                f"{f' / {cfg.max_steps} steps' if cfg.max_steps else ''}, mask loss "
                f"{'on' if cfg.mask_loss else 'off'}")

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        model.train()
        for index in torch.randperm(len(dataset.train), generator=order_rng).tolist():
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            report = training_step(model, optimizer, dataset.train[index], cfg, loss_cfg, rng)
            steps += 1
            losses.append(report.value)
            logger.debug(f"step {steps}: {report.to_dict()}")
        if not losses:
            break

        model.eval()
        validation_loss = evaluate(model, dataset.validation, cfg, loss_cfg)
        if not math.isfinite(validation_loss):
            raise DivergenceError(f"non-finite validation loss after epoch {epoch}")
        record = EpochRecord(epoch, sum(losses) / len(losses), validation_loss, steps, float(model.beta))
        log.epochs.append(record)
        if validation_loss < best_loss:
            best_loss = validation_loss
            best_state = copy.deepcopy(model.state_dict())
        log.best_epoch = select_best_epoch(log)
        logger.info(f"Epoch {epoch}: train loss {record.train_loss:.5f}, validation loss "
                    f"{validation_loss:.5f}, best epoch {log.best_epoch}")
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break

    model.load_state_dict(best_state)
    logger.info(f"Training finished after {steps} steps; restored epoch {log.best_epoch}")
    return TrainingResult(model, log)


def row_step(row: str, dataset: SyntheticDataset, base: ModelConfig,
             loss_cfg: Optional[LossConfig] = None, **overrides) -> LossReport:
    """Build the model of one named row and run a single training step."""
    loss_cfg = loss_cfg or LossConfig()
    cfg = TrainConfig.for_row(row, **overrides)
    model = ToyNsfModel(cfg.model_config(base))
    prepare_model(model, dataset)
    rng = torch.Generator()
    rng.manual_seed(cfg.seed)
    return training_step(model, make_optimizer(model, cfg), dataset.train[0], cfg, loss_cfg, rng)
