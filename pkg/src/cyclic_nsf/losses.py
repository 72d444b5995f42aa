"""
Training losses: multi-resolution log spectral-amplitude loss, the sine-masked
spectral loss on the harmonic-branch block outputs, and the L1 pull on a
trainable beta.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import torch

from .config_loader import check_keys
from .errors import ConfigurationError, InputValidationError
from .signal_core import StftConfig, stft_tensor
from .source_module import BETA_PRIOR, SourceConfig, gen_sine_harmonics

DEFAULT_STFT_CONFIGS = (
    StftConfig(512, 320, 80),
    StftConfig(128, 80, 40),
    StftConfig(2048, 1920, 640),
)
DEFAULT_ETA = 1e-5
BETA_PENALTY_WEIGHT = 0.01
NUM_HARMONIC_BLOCKS = 5


class MaskReduction(str, Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class LossConfig:
    stft_configs: Tuple[StftConfig, ...] = DEFAULT_STFT_CONFIGS
    eta: float = DEFAULT_ETA
    block_taps: Tuple[int, ...] = tuple(range(NUM_HARMONIC_BLOCKS))
    mask_harmonics: int = 8
    mask_reduction: MaskReduction = MaskReduction.SUM
    beta_weight: float = BETA_PENALTY_WEIGHT
    beta_target: float = BETA_PRIOR

    def __post_init__(self):
        object.__setattr__(self, "stft_configs", tuple(self.stft_configs))
        object.__setattr__(self, "block_taps", tuple(int(b) for b in self.block_taps))
        object.__setattr__(self, "mask_reduction", MaskReduction(self.mask_reduction))
        if self.eta <= 0:
            raise ConfigurationError(f"eta must be positive, got {self.eta}")
        if not self.stft_configs:
            raise ConfigurationError("at least one STFT configuration is required")
        if self.mask_harmonics < 1:
            raise ConfigurationError(f"mask_harmonics must be >= 1, got {self.mask_harmonics}")
        if not self.block_taps:
            raise ConfigurationError("at least one block tap is required for the masked loss")
        if any(b < 0 for b in self.block_taps):
            raise ConfigurationError(f"block taps must be non-negative, got {self.block_taps}")

    @classmethod
    def from_dict(cls, values: dict) -> "LossConfig":
        values = dict(values)
        check_keys(values, list(cls.__dataclass_fields__) + ["stft"], "loss config")
        stft = values.pop("stft", None)
        if stft is not None:
            values["stft_configs"] = tuple(StftConfig.from_dict(s) for s in stft)
        return cls(**values)

    def to_dict(self) -> dict:
        return {
            "stft": [c.to_dict() for c in self.stft_configs],
            "eta": self.eta,
            "block_taps": list(self.block_taps),
            "mask_harmonics": self.mask_harmonics,
            "mask_reduction": self.mask_reduction.value,
            "beta_weight": self.beta_weight,
            "beta_target": self.beta_target,
        }


@dataclass
class ModelOutputs:
    """What the losses need from a forward pass: the output and the block taps."""
    waveform: torch.Tensor
    block_outputs: List[torch.Tensor] = field(default_factory=list)


@dataclass
class LossReport:
    total: torch.Tensor
    plain: float
    per_config: List[float]
    per_block_masked: List[float] = field(default_factory=list)
    beta_penalty: float = 0.0

    @property
    def value(self) -> float:
        return float(self.total.detach())

    def to_dict(self) -> dict:
        return {
            "total": self.value,
            "plain": self.plain,
            "per_config": list(self.per_config),
            "masked": sum(self.per_block_masked),
            "per_block_masked": list(self.per_block_masked),
            "beta_penalty": self.beta_penalty,
        }


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.dim() != 1 or b.dim() != 1:
        raise InputValidationError("losses expect 1-D waveforms")
    if a.shape[0] != b.shape[0]:
        raise InputValidationError(f"waveform lengths differ: {a.shape[0]} vs {b.shape[0]}")


def _power(signal: torch.Tensor, config: StftConfig) -> torch.Tensor:
    spectrum = stft_tensor(signal, config)
    return spectrum.real ** 2 + spectrum.imag ** 2


def log_spectral_distance(reference_power: torch.Tensor, generated_power: torch.Tensor,
                          eta: float, mask_power: Optional[torch.Tensor] = None) -> torch.Tensor:
    """(1 / 2NK') sum_n sum_k [log((|y|^2 |m|^2 + eta) / (|p|^2 |m|^2 + eta))]^2."""
    if mask_power is not None:
        reference_power = reference_power * mask_power
        generated_power = generated_power * mask_power
    diff = torch.log(reference_power + eta) - torch.log(generated_power + eta)
    frames, bins = diff.shape
    return (diff ** 2).sum() / (2 * frames * bins)


def spectral_amplitude_losses(generated: torch.Tensor, target: torch.Tensor,
                              cfgs: Sequence[StftConfig] = DEFAULT_STFT_CONFIGS,
                              eta: float = DEFAULT_ETA) -> List[torch.Tensor]:
    """Plain log spectral-amplitude loss, one entry per STFT configuration."""
    _check_pair(generated, target)
    return [log_spectral_distance(_power(target, c), _power(generated, c), eta) for c in cfgs]


def spectral_amplitude_loss(generated: torch.Tensor, target: torch.Tensor,
                            cfgs: Sequence[StftConfig] = DEFAULT_STFT_CONFIGS,
                            eta: float = DEFAULT_ETA) -> torch.Tensor:
    """Mean of the per-configuration plain losses."""
    losses = spectral_amplitude_losses(generated, target, cfgs, eta)
    return torch.stack(losses).mean()


def build_sine_mask(f0: torch.Tensor, cfg: SourceConfig, rng: torch.Generator) -> torch.Tensor:
    """Mask waveform: mean of the H harmonic sines (fresh phase and noise per call)."""
    return gen_sine_harmonics(f0, cfg, rng).mean(dim=0)


def masked_spectral_loss(block_output: torch.Tensor, target: torch.Tensor, mask: torch.Tensor,
                         cfgs: Sequence[StftConfig] = DEFAULT_STFT_CONFIGS,
                         eta: float = DEFAULT_ETA) -> torch.Tensor:
    """Sine-masked spectral loss, averaged over STFT configurations."""
    _check_pair(block_output, target)
    _check_pair(mask, target)
    if eta <= 0:
        raise InputValidationError(f"eta must be positive, got {eta}")
    mask = mask.to(target.dtype)
    losses = [log_spectral_distance(_power(target, c), _power(block_output, c), eta,
                                    mask_power=_power(mask, c)) for c in cfgs]
    return torch.stack(losses).mean()


def beta_penalty(beta: torch.Tensor, target: float = BETA_PRIOR,
                 weight: float = BETA_PENALTY_WEIGHT) -> torch.Tensor:
    """weight * |beta - target|, summed if beta is a track."""
    return weight * torch.abs(beta - target).sum()


def total_training_loss(outputs: ModelOutputs, target: torch.Tensor,
                        mask: Optional[torch.Tensor], cfg: LossConfig,
                        beta: Optional[torch.Tensor] = None) -> LossReport:
    """
    Plain loss on the output, plus the masked loss on every tapped harmonic
    block output when a mask is given, plus the beta penalty when beta is
    trainable (pass None for a fixed beta).
    """
    per_config = spectral_amplitude_losses(outputs.waveform, target, cfg.stft_configs, cfg.eta)
    plain = torch.stack(per_config).mean()
    total = plain

    per_block = []
    if mask is not None:
        missing = [b for b in cfg.block_taps if b >= len(outputs.block_outputs)]
        if missing:
            raise InputValidationError(
                f"masked loss needs block outputs {list(cfg.block_taps)}, "
                f"got {len(outputs.block_outputs)}")
        per_block = [masked_spectral_loss(outputs.block_outputs[b], target, mask,
                                          cfg.stft_configs, cfg.eta)
                     for b in cfg.block_taps]
        masked = torch.stack(per_block).sum()
        if cfg.mask_reduction is MaskReduction.MEAN:
            masked = masked / len(per_block)
        total = total + masked

    penalty = 0.0
    if beta is not None:
        penalty_term = beta_penalty(beta, cfg.beta_target, cfg.beta_weight)
        total = total + penalty_term
        penalty = float(penalty_term.detach())

    return LossReport(
        total=total,
        plain=float(plain.detach()),
        per_config=[float(x.detach()) for x in per_config],
        per_block_masked=[float(x.detach()) for x in per_block],
        beta_penalty=penalty,
    )
