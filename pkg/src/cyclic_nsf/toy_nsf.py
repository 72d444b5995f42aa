"""
Reduced-width harmonic-plus-noise NSF with sinc-filter merging.

Layout: a condition net maps frame features (plus log-F0) to `channels`
hidden features that are up-sampled and smoothed to the sample rate. The
source module excites a chain of five harmonic-branch filter blocks, a
Gaussian noise signal excites one noise-branch block, and the two branch
outputs are merged by the time-variant sinc low-pass / high-pass pair.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Union

import torch
import torch.nn as nn

from .audio_io import F0Track
from .config_loader import check_keys
from .errors import ConfigurationError, GraphError, InputValidationError
from .logging_config import get_logger
from .losses import LossReport, ModelOutputs
from .signal_core import (
    DEFAULT_FRAME_SHIFT,
    DEFAULT_SMOOTH_PASSES,
    DEFAULT_SMOOTH_WINDOW,
    FrameSequence,
    upsample_and_smooth,
    upsampling_factor,
)
from .sinc_filter import DEFAULT_CUTOFF_HZ, DEFAULT_ORDER, SincFilterSpec, combine_hn
from .source_module import (
    BETA_PRIOR,
    CyclicNoiseConfig,
    MixLayer,
    SourceConfig,
    gen_cyclic_noise,
    gen_gaussian_noise,
    gen_pulse_train,
    gen_sine_source,
    mix_tanh,
)

logger = get_logger(__name__)

NUM_HARMONIC_BLOCKS = 5
NUM_NOISE_BLOCKS = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class SourceType(str, Enum):
    SIN = "sin"
    PUL = "pul"
    RNO = "rno"
    CNO = "cno"


def resolve_dtype(name: str) -> torch.dtype:
    try:
        return _DTYPES[name]
    except KeyError:
        raise ConfigurationError(f"unsupported dtype '{name}', expected one of {sorted(_DTYPES)}")


@dataclass(frozen=True)
class FilterBlockSpec:
    num_layers: int = 10
    kernel_size: int = 3
    channels: int = 16
    skip: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigurationError(f"a filter block needs at least one layer, got {self.num_layers}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.channels < 1:
            raise ConfigurationError(f"channels must be >= 1, got {self.channels}")

    def dilation(self, k: int) -> int:
        """Dilation of layer k, 1-based."""
        return 2 ** (k - 1)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilation(k) for k in range(1, self.num_layers + 1))


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    channels: int = 16
    num_layers: int = 10
    kernel_size: int = 3
    source_type: SourceType = SourceType.CNO
    beta: float = BETA_PRIOR
    trainable_beta: bool = False
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    sinc_order: int = DEFAULT_ORDER
    frame_shift: float = DEFAULT_FRAME_SHIFT
    smooth_window: int = DEFAULT_SMOOTH_WINDOW
    smooth_passes: int = DEFAULT_SMOOTH_PASSES
    zero_init_output: bool = False
    init_seed: int = 0
    dtype: str = "float32"
    source: SourceConfig = field(default_factory=SourceConfig)

    def __post_init__(self):
        object.__setattr__(self, "source_type", SourceType(self.source_type))
        if isinstance(self.source, dict):
            object.__setattr__(self, "source", SourceConfig.from_dict(self.source))
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.beta <= 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        resolve_dtype(self.dtype)
        upsampling_factor(self.frame_shift, self.source.sample_rate)
        if not 0 < self.cutoff_hz < self.source.sample_rate / 2:
            raise ConfigurationError(f"cutoff_hz must lie in (0, Nyquist), got {self.cutoff_hz}")

    @property
    def block_spec(self) -> FilterBlockSpec:
        return FilterBlockSpec(self.num_layers, self.kernel_size, self.channels)

    @property
    def torch_dtype(self) -> torch.dtype:
        return resolve_dtype(self.dtype)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        check_keys(values, cls.__dataclass_fields__, "model config")
        return cls(**values)

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "channels": self.channels,
            "num_layers": self.num_layers,
            "kernel_size": self.kernel_size,
            "source_type": self.source_type.value,
            "beta": self.beta,
            "trainable_beta": self.trainable_beta,
            "cutoff_hz": self.cutoff_hz,
            "sinc_order": self.sinc_order,
            "frame_shift": self.frame_shift,
            "smooth_window": self.smooth_window,
            "smooth_passes": self.smooth_passes,
            "zero_init_output": self.zero_init_output,
            "init_seed": self.init_seed,
            "dtype": self.dtype,
            "source": self.source.to_dict(),
        }


@dataclass
class ForwardOutput(ModelOutputs):
    source: Optional[torch.Tensor] = None
    noise_source: Optional[torch.Tensor] = None
    f0_upsampled: Optional[torch.Tensor] = None


def condition_inputs(f0_frames: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    """Frame features with log-F0 appended as the last column (0 when unvoiced)."""
    f0 = f0_frames.to(features.dtype)
    log_f0 = torch.where(f0 > 0, torch.log(f0.clamp(min=1e-3)), torch.zeros_like(f0))
    return torch.cat([features, log_f0[:, None]], dim=1)


class ConditionNet(nn.Module):
    """Two frame-level convolutions with tanh, applied to standardised inputs."""

    def __init__(self, input_dim: int, channels: int):
        super().__init__()
        self.register_buffer("feature_mean", torch.zeros(input_dim))
        self.register_buffer("feature_std", torch.ones(input_dim))
        self.conv1 = nn.Conv1d(input_dim, channels, 3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)

    def set_feature_stats(self, mean: torch.Tensor, std: torch.Tensor) -> None:
        if mean.shape != self.feature_mean.shape or std.shape != self.feature_std.shape:
            raise InputValidationError(
                f"feature stats must have shape {tuple(self.feature_mean.shape)}")
        self.feature_mean.copy_(mean)
        self.feature_std.copy_(std.clamp(min=1e-5))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        x = (frames.to(self.feature_mean.dtype) - self.feature_mean) / self.feature_std
        x = x.transpose(0, 1)[None]
        x = torch.tanh(self.conv1(x))
        x = torch.tanh(self.conv2(x))
        return x[0].transpose(0, 1)


class FilterBlock(nn.Module):
    """
    Dilated-convolution filter block: h <- h + tanh(conv_k(h) + c) for each
    layer, skip sum of the layer outputs projected back to one channel and
    added to the input signal.
    """

    def __init__(self, spec: FilterBlockSpec, zero_init_output: bool = False):
        super().__init__()
        self.spec = spec
        c = spec.channels
        self.in_proj = nn.Conv1d(1, c, 1)
        self.convs = nn.ModuleList()
        for k in range(1, spec.num_layers + 1):
            d = spec.dilation(k)
            self.convs.append(nn.Conv1d(c, c, spec.kernel_size, dilation=d,
                                        padding=d * (spec.kernel_size - 1) // 2))
        self.out_proj = nn.Conv1d(c, 1, 1)
        if zero_init_output:
            nn.init.zeros_(self.out_proj.weight)
            nn.init.zeros_(self.out_proj.bias)

    def forward(self, signal: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[0] != signal.shape[0]:
            raise InputValidationError(
                f"condition has {cond.shape[0]} samples, signal has {signal.shape[0]}")
        c = cond.transpose(0, 1)[None]
        hidden = self.in_proj(signal[None, None, :])
        skip = torch.zeros_like(hidden)
        for conv in self.convs:
            hidden = hidden + torch.tanh(conv(hidden) + c)
            if self.spec.skip:
                skip = skip + hidden
        if not self.spec.skip:
            skip = hidden
        return signal + self.out_proj(torch.tanh(skip / len(self.convs)))[0, 0]


class ToyNsfModel(nn.Module):

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        dtype = config.torch_dtype
        generator = torch.Generator()
        generator.manual_seed(config.init_seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.init_seed)
            self.condition_net = ConditionNet(config.feature_dim + 1, config.channels)
            self.harmonic_blocks = nn.ModuleList(
                FilterBlock(config.block_spec, config.zero_init_output)
                for _ in range(NUM_HARMONIC_BLOCKS))
            self.noise_blocks = nn.ModuleList(
                FilterBlock(config.block_spec, config.zero_init_output)
                for _ in range(NUM_NOISE_BLOCKS))
        mix_channels = config.source.harmonics if config.source_type is SourceType.SIN else 1
        self.mix_layer = MixLayer(mix_channels, generator, dtype)
        if config.source_type is SourceType.CNO:
            # cyclic noise is built from N(0, sigma^2) draws; start it at the sine amplitude alpha
            with torch.no_grad():
                self.mix_layer.weights.fill_(config.source.alpha / config.source.sigma)
        self.to(dtype)
        # beta stays float64 regardless of the model dtype
        beta = torch.tensor(config.beta, dtype=torch.float64)
        if config.trainable_beta:
            self.beta = nn.Parameter(beta)
        else:
            self.register_buffer("beta", beta)
        logger.debug(f"Built toy NSF model with {self.num_parameters()} trainable parameters")

    @property
    def dtype(self) -> torch.dtype:
        return self.config.torch_dtype

    @property
    def frame_samples(self) -> int:
        return upsampling_factor(self.config.frame_shift, self.config.source.sample_rate)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def trainable_beta(self) -> Optional[torch.Tensor]:
        return self.beta if self.config.trainable_beta else None

    def excitation(self, f0: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
        """Harmonic-branch source for the configured source type."""
        cfg = self.config.source
        source_type = self.config.source_type
        if source_type is SourceType.SIN:
            source = gen_sine_source(f0, cfg, self.mix_layer, rng)
        elif source_type is SourceType.PUL:
            source = mix_tanh(gen_pulse_train(f0, cfg, rng)[None, :], self.mix_layer)
        elif source_type is SourceType.RNO:
            noise = gen_gaussian_noise(f0.shape[0], cfg.unvoiced_std, rng)
            source = mix_tanh(noise[None, :], self.mix_layer)
        else:
            source = gen_cyclic_noise(f0, CyclicNoiseConfig(self.beta), cfg, self.mix_layer, rng)
        return source.to(self.dtype)

    def forward(self, f0: Union[F0Track, torch.Tensor], features: Union[FrameSequence, torch.Tensor],
                rng: torch.Generator) -> ForwardOutput:
        for name, value in (("F0", f0), ("features", features)):
            shift = getattr(value, "frame_shift", None)
            if shift is not None and abs(shift - self.config.frame_shift) > 1e-9:
                raise InputValidationError(
                    f"{name} frame shift is {shift * 1000:g} ms but the model runs at "
                    f"{self.config.frame_shift * 1000:g} ms")
        f0_frames = f0.values if isinstance(f0, F0Track) else f0
        feature_frames = features.frames if isinstance(features, FrameSequence) else features
        f0_frames = f0_frames.to(torch.float64)
        if f0_frames.dim() != 1:
            raise InputValidationError("F0 must be a 1-D frame sequence")
        if feature_frames.dim() != 2 or feature_frames.shape[1] != self.config.feature_dim:
            raise InputValidationError(
                f"features must be (frames, {self.config.feature_dim}), got {tuple(feature_frames.shape)}")
        if f0_frames.shape[0] != feature_frames.shape[0]:
            raise InputValidationError(
                f"F0 has {f0_frames.shape[0]} frames but features have {feature_frames.shape[0]}")

        cfg = self.config
        sample_rate = cfg.source.sample_rate
        inputs = condition_inputs(f0_frames, feature_frames.to(self.dtype))
        hidden = self.condition_net(inputs)
        cond = upsample_and_smooth(FrameSequence(hidden, cfg.frame_shift), sample_rate,
                                   cfg.smooth_window, cfg.smooth_passes)
        f0_up = upsample_and_smooth(FrameSequence(f0_frames, cfg.frame_shift), sample_rate,
                                    smooth_passes=0)[:, 0]

        source = self.excitation(f0_up, rng)
        noise_source = gen_gaussian_noise(f0_up.shape[0], cfg.source.sigma, rng, self.dtype)

        harmonic = source
        block_outputs = []
        for block in self.harmonic_blocks:
            harmonic = block(harmonic, cond)
            block_outputs.append(harmonic)
        noise = noise_source
        for block in self.noise_blocks:
            noise = block(noise, cond)

        spec = SincFilterSpec.constant(cfg.cutoff_hz, sample_rate, f0_frames.shape[0], cfg.sinc_order)
        waveform = combine_hn(harmonic, noise, spec, self.frame_samples)
        return ForwardOutput(waveform=waveform, block_outputs=block_outputs, source=source,
                             noise_source=noise_source, f0_upsampled=f0_up)


def backward(model: nn.Module, report: Union[LossReport, torch.Tensor],
             retain_graph: bool = False) -> Dict[str, torch.Tensor]:
    """
    Reverse-mode gradients of the loss for every trainable parameter, keyed by
    parameter name. Parameters the loss does not depend on get zeros.
    """
    total = report.total if isinstance(report, LossReport) else report
    if not isinstance(total, torch.Tensor) or not total.requires_grad:
        raise GraphError("loss is not attached to the model's computation graph")
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(total, [p for _, p in named], retain_graph=retain_graph,
                                allow_unused=True)
    return {name: torch.zeros_like(p) if g is None else g
            for (name, p), g in zip(named, grads)}


def _loss_value(result: Union[LossReport, torch.Tensor]) -> float:
    total = result.total if isinstance(result, LossReport) else result
    return float(total)


def gradient_check(model: nn.Module, loss_fn: Callable[[], Union[LossReport, torch.Tensor]],
                   step: float = 1e-4) -> Dict[str, float]:
    """
    Compare analytic gradients with central finite differences. `loss_fn` must
    be deterministic (reseed its generators on every call). Returns the relative
    error ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||) for
    each parameter.
    """
    analytic = backward(model, loss_fn())
    errors = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            if not param.requires_grad:
                continue
            numeric = torch.zeros_like(param, dtype=torch.float64)
            flat = param.view(-1)
            numeric_flat = numeric.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                plus = _loss_value(loss_fn())
                flat[i] = original - step
                minus = _loss_value(loss_fn())
                flat[i] = original
                numeric_flat[i] = (plus - minus) / (2 * step)
            exact = analytic[name].to(torch.float64)
            scale = max(float(exact.norm()), float(numeric.norm()), 1e-12)
            errors[name] = float((exact - numeric).norm()) / scale
            logger.debug(f"gradient check {name}: relative error {errors[name]:.3e}")
    return errors


def build_model(config: ModelConfig) -> ToyNsfModel:
    model = ToyNsfModel(config)
    logger.info(f"Model: source={config.source_type.value}, beta={config.beta}"
                f"{' (trainable)' if config.trainable_beta else ''}, channels={config.channels}, "
                f"dtype={config.dtype}, parameters={model.num_parameters()}")
    return model
