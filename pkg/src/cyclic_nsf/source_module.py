"""
Excitation signals for the harmonic branch: sine-based source, pulse train,
Gaussian noise and cyclic noise, plus the trainable tanh mix layer.

Every generator takes an explicit `torch.Generator`; callers own RNG state.
Random draws happen in a fixed order (initial phase first, then noise) so a
seed fully determines the output. Internally everything is computed in float64
and the result is returned in the dtype of the F0 tensor.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import torch
import torch.nn as nn

from .config_loader import check_keys
from .errors import ConfigurationError, InputValidationError
from .signal_core import DEFAULT_SAMPLE_RATE

REFERENCE_BETAS = (0.435, 0.870, 1.739)
BETA_PRIOR = 0.870
# cyclic-noise kernel terms below this relative magnitude are dropped
KERNEL_TOLERANCE = 1e-16
# upper bound on pulse x lag terms materialised at once by cyclic_excitation
CHUNK_ELEMENTS = 1 << 20


@dataclass(frozen=True)
class SourceConfig:
    harmonics: int = 8
    sigma: float = 0.003
    alpha: float = 0.1
    sample_rate: int = DEFAULT_SAMPLE_RATE
    seed: Optional[int] = None

    def __post_init__(self):
        if self.harmonics < 1:
            raise ConfigurationError(f"harmonic count must be >= 1, got {self.harmonics}")
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def unvoiced_std(self) -> float:
        """Std of the unvoiced branch, (alpha / 3 sigma) * N(0, sigma^2)."""
        return self.alpha / 3.0

    def generator(self) -> torch.Generator:
        rng = torch.Generator()
        rng.manual_seed(0 if self.seed is None else self.seed)
        return rng

    @classmethod
    def from_dict(cls, values: dict) -> "SourceConfig":
        check_keys(values, cls.__dataclass_fields__, "source config")
        return cls(**values)

    def to_dict(self) -> dict:
        return {"harmonics": self.harmonics, "sigma": self.sigma, "alpha": self.alpha,
                "sample_rate": self.sample_rate, "seed": self.seed}


class MixLayer(nn.Module):
    """
    Trainable feed-forward layer with tanh activation:
    e_t = tanh(sum_c w_c * x_t^<c> + w_b).
    """

    def __init__(self, num_channels: int, generator: Optional[torch.Generator] = None,
                 dtype=torch.float64):
        super().__init__()
        if num_channels < 1:
            raise ConfigurationError(f"mix layer needs at least one channel, got {num_channels}")
        bound = 1.0 / math.sqrt(num_channels)
        init = (torch.rand(num_channels, generator=generator, dtype=torch.float64) * 2 - 1) * bound
        self.weights = nn.Parameter(init.to(dtype))
        self.bias = nn.Parameter(torch.zeros((), dtype=dtype))

    @classmethod
    def fixed(cls, weights: Sequence[float], bias: float = 0.0, dtype=torch.float64) -> "MixLayer":
        layer = cls(len(weights), dtype=dtype)
        with torch.no_grad():
            layer.weights.copy_(torch.as_tensor(weights, dtype=dtype))
            layer.bias.fill_(bias)
        return layer

    @property
    def num_channels(self) -> int:
        return self.weights.shape[0]

    def forward(self, channels: torch.Tensor) -> torch.Tensor:
        if channels.dim() != 2 or channels.shape[0] != self.num_channels:
            raise InputValidationError(
                f"mix layer expects ({self.num_channels}, T) channels, got {tuple(channels.shape)}")
        channels = channels.to(self.weights.dtype)
        return torch.tanh(self.weights @ channels + self.bias)


@dataclass(frozen=True)
class CyclicNoiseConfig:
    """Decay rate beta of the cyclic noise, scalar or one value per sample."""
    beta: Union[float, torch.Tensor] = BETA_PRIOR

    def __post_init__(self):
        value = self.beta.detach() if isinstance(self.beta, torch.Tensor) else torch.tensor(self.beta)
        if not bool((value > 0).all()):
            raise InputValidationError("beta must be positive for every sample")

    def per_sample(self, length: int) -> torch.Tensor:
        beta = self.beta
        if not isinstance(beta, torch.Tensor):
            beta = torch.tensor(float(beta), dtype=torch.float64)
        beta = beta.to(torch.float64)
        if beta.dim() == 0:
            return beta.expand(length)
        if beta.shape != (length,):
            raise InputValidationError(
                f"beta track has {beta.shape[0]} samples, signal has {length}")
        return beta


def check_f0(f0: torch.Tensor) -> torch.Tensor:
    """Validate an up-sampled F0 track (1-D, finite, non-negative)."""
    if not isinstance(f0, torch.Tensor):
        f0 = torch.as_tensor(f0, dtype=torch.float64)
    if f0.dim() != 1 or f0.shape[0] == 0:
        raise InputValidationError("F0 must be a non-empty 1-D sample-level sequence")
    if not bool(torch.isfinite(f0).all()):
        raise InputValidationError("F0 contains NaN or Inf")
    if bool((f0 < 0).any()):
        raise InputValidationError("F0 must be non-negative (0 marks unvoiced samples)")
    return f0


def draw_initial_phase(rng: torch.Generator) -> torch.Tensor:
    """Random initial phase, uniform in [-pi, pi]."""
    return (torch.rand((), generator=rng, dtype=torch.float64) * 2 - 1) * math.pi


def harmonic_phase(f0: torch.Tensor, harmonic: int, sample_rate: int,
                   phi: torch.Tensor) -> torch.Tensor:
    """Cumulative phase sum_{k<=t} 2 pi h f_k / N_s + phi; runs through unvoiced regions."""
    return 2 * math.pi * torch.cumsum(harmonic * f0.to(torch.float64), dim=0) / sample_rate + phi


def gen_gaussian_noise(length: int, std: float, rng: torch.Generator,
                       dtype=torch.float64) -> torch.Tensor:
    """i.i.d. N(0, std^2) samples."""
    if length < 1:
        raise InputValidationError(f"noise length must be >= 1, got {length}")
    if std <= 0:
        raise InputValidationError(f"noise std must be positive, got {std}")
    return (torch.randn(length, generator=rng, dtype=torch.float64) * std).to(dtype)


def _sine_branch(f0: torch.Tensor, harmonic: int, cfg: SourceConfig,
                 phi: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    voiced = f0 > 0
    sine = cfg.alpha * torch.sin(harmonic_phase(f0, harmonic, cfg.sample_rate, phi))
    return torch.where(voiced, sine + noise, cfg.alpha / (3 * cfg.sigma) * noise)


def gen_sine_harmonic(f0: torch.Tensor, harmonic: int, cfg: SourceConfig,
                      rng: torch.Generator, phi: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Sine carrying the h-th harmonic: alpha*sin(phase) + n in voiced samples,
    (alpha / 3 sigma) * n in unvoiced ones, n ~ N(0, sigma^2).
    """
    f0 = check_f0(f0)
    if harmonic < 1:
        raise InputValidationError(f"harmonic index must be >= 1, got {harmonic}")
    if phi is None:
        phi = draw_initial_phase(rng)
    noise = gen_gaussian_noise(f0.shape[0], cfg.sigma, rng)
    return _sine_branch(f0, harmonic, cfg, phi, noise).to(f0.dtype)


def gen_sine_harmonics(f0: torch.Tensor, cfg: SourceConfig, rng: torch.Generator) -> torch.Tensor:
    """All H harmonic sines, (H, T); one phase shared, independent noise per harmonic."""
    f0 = check_f0(f0)
    phi = draw_initial_phase(rng)
    return torch.stack([gen_sine_harmonic(f0, h, cfg, rng, phi=phi)
                        for h in range(1, cfg.harmonics + 1)])


def mix_tanh(channels: Union[torch.Tensor, Sequence[torch.Tensor]], layer: MixLayer) -> torch.Tensor:
    """Merge equal-length channels through the tanh mix layer."""
    if not isinstance(channels, torch.Tensor):
        lengths = {c.shape[0] for c in channels}
        if len(lengths) != 1:
            raise InputValidationError(f"channels differ in length: {sorted(lengths)}")
        channels = torch.stack(list(channels))
    return layer(channels)


def gen_sine_source(f0: torch.Tensor, cfg: SourceConfig, layer: MixLayer,
                    rng: torch.Generator) -> torch.Tensor:
    """Sine-based source: H harmonics merged by the mix layer."""
    return mix_tanh(gen_sine_harmonics(f0, cfg, rng), layer)


def pulse_positions(f0: torch.Tensor, sample_rate: int, phi: torch.Tensor) -> torch.Tensor:
    """
    Unit pulses at the local maxima of the noise-free fundamental sine inside
    voiced regions. A flat peak marks its first sample.
    """
    f0 = check_f0(f0)
    sine = torch.sin(harmonic_phase(f0, 1, sample_rate, phi))
    pulses = torch.zeros(f0.shape[0], dtype=torch.float64)
    if f0.shape[0] < 3:
        return pulses
    rising = sine[1:-1] > sine[:-2]
    not_falling_after = sine[1:-1] >= sine[2:]
    peak = rising & not_falling_after & (f0[1:-1] > 0)
    pulses[1:-1] = peak.to(torch.float64)
    return pulses


def gen_pulse_train(f0: torch.Tensor, cfg: SourceConfig, rng: torch.Generator) -> torch.Tensor:
    """
    Pulse-train source: pulses in voiced regions, (alpha / 3 sigma) * N(0, sigma^2)
    noise in unvoiced regions.
    """
    f0 = check_f0(f0)
    phi = draw_initial_phase(rng)
    pulses = pulse_positions(f0, cfg.sample_rate, phi)
    noise = gen_gaussian_noise(f0.shape[0], cfg.sigma, rng)
    out = torch.where(f0 > 0, pulses, cfg.alpha / (3 * cfg.sigma) * noise)
    return out.to(f0.dtype)


def kernel_span(f0: torch.Tensor, beta: torch.Tensor, sample_rate: int,
                tolerance: float = KERNEL_TOLERANCE) -> int:
    """Lags after which exp(-k f_t / (beta_t N_s)) is below `tolerance` for every voiced t."""
    voiced = f0 > 0
    length = f0.shape[0]
    if not bool(voiced.any()):
        return 1
    slowest = float((beta.detach()[voiced] / f0[voiced].to(torch.float64)).max())
    span = math.ceil(math.log(1.0 / tolerance) * slowest * sample_rate) + 1
    return min(length, span)


def cyclic_excitation(f0: torch.Tensor, pulses: torch.Tensor, beta: torch.Tensor,
                      noise: torch.Tensor, sample_rate: int) -> torch.Tensor:
    """
    Pre-tanh cyclic noise:
        voiced t:   sum_{k=0}^{t-1} n_{k+1} exp(-k f_t / (beta_t N_s)) p_{t-k}
        unvoiced t: n_t
    The decay uses f_t and beta_t of the output sample. Only pulse positions are
    visited and the kernel is truncated where it falls below KERNEL_TOLERANCE.
    Differentiable with respect to `beta` and `noise`. Pulses are processed in
    blocks of at most CHUNK_ELEMENTS kernel terms.
    """
    f0 = check_f0(f0).to(torch.float64)
    length = f0.shape[0]
    if pulses.shape[0] != length or noise.shape[0] != length or beta.shape[0] != length:
        raise InputValidationError("f0, pulses, beta and noise must have equal length")
    noise = noise.to(torch.float64)
    beta = beta.to(torch.float64)
    voiced = f0 > 0

    positions = torch.nonzero(pulses != 0).squeeze(1)
    accumulated = torch.zeros(length, dtype=torch.float64)
    if positions.numel() > 0 and bool(voiced.any()):
        span = kernel_span(f0, beta, sample_rate)
        lags = torch.arange(span)
        kernel_noise = noise[lags]
        decay_lags = lags.to(torch.float64)
        weights = pulses.to(torch.float64)
        chunk = max(1, CHUNK_ELEMENTS // span)
        for start in range(0, positions.numel(), chunk):
            block = positions[start:start + chunk]
            targets = block[:, None] + lags[None, :]
            valid = targets < length
            targets = targets.clamp(max=length - 1)
            rate = f0[targets] / (beta[targets] * sample_rate)
            terms = kernel_noise[None, :] * torch.exp(-decay_lags * rate) * weights[block][:, None]
            accumulated = accumulated.index_add(0, targets[valid], terms[valid])
    return torch.where(voiced, accumulated, noise)


def gen_cyclic_noise(f0: torch.Tensor, beta: CyclicNoiseConfig, cfg: SourceConfig,
                     layer: MixLayer, rng: torch.Generator) -> torch.Tensor:
    """
    Cyclic-noise source: pulse train convolved with a decaying copy of a fresh
    Gaussian noise n ~ N(0, sigma^2), then e_t = tanh(w_1 * e~_t + w_b).
    """
    f0 = check_f0(f0)
    phi = draw_initial_phase(rng)
    pulses = pulse_positions(f0, cfg.sample_rate, phi)
    noise = gen_gaussian_noise(f0.shape[0], cfg.sigma, rng)
    excitation = cyclic_excitation(f0, pulses, beta.per_sample(f0.shape[0]), noise, cfg.sample_rate)
    return mix_tanh(excitation[None, :], layer).to(f0.dtype)


def decay_envelope(f0_hz: float, beta: float, cfg: SourceConfig, rng: torch.Generator,
                   draws: int = 1000, num_periods: float = 2.0) -> torch.Tensor:
    """
    Ensemble RMS envelope of single-pulse cyclic noise at constant F0, normalised
    to lag 0. Entry k estimates exp(-k f / (beta N_s)).
    """
    if f0_hz <= 0:
        raise InputValidationError("decay envelope needs a voiced F0")
    length = int(round(num_periods * cfg.sample_rate / f0_hz)) + 1
    f0 = torch.full((length,), float(f0_hz), dtype=torch.float64)
    pulses = torch.zeros(length, dtype=torch.float64)
    pulses[0] = 1.0
    betas = CyclicNoiseConfig(beta).per_sample(length)
    power = torch.zeros(length, dtype=torch.float64)
    for _ in range(draws):
        noise = gen_gaussian_noise(length, cfg.sigma, rng)
        power += cyclic_excitation(f0, pulses, betas, noise, cfg.sample_rate) ** 2
    envelope = torch.sqrt(power / draws)
    return envelope / envelope[0]
