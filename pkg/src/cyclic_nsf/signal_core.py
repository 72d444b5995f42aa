"""
Numeric substrate shared by every other module: waveform and frame containers,
framing, windowing, STFT, frame-to-sample up-sampling with moving-average
smoothing, and level utilities.

All functions are pure. Sample sequences are 1-D torch tensors; frame matrices
are (frames, dims).
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, InputValidationError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FRAME_SHIFT = 0.005
DEFAULT_SMOOTH_WINDOW = 320
DEFAULT_SMOOTH_PASSES = 2
TARGET_DBOV = -26.0
# frames quieter than the loudest frame by more than this are treated as pauses
ACTIVITY_MARGIN_DB = 40.0
LEVEL_FRAME_SECONDS = 0.02


class WindowType(str, Enum):
    HANN = "hann"
    HAMMING = "hamming"
    RECT = "rect"


@dataclass(frozen=True)
class Waveform:
    """Mono signal at a declared sampling rate."""
    samples: torch.Tensor
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        if not isinstance(self.samples, torch.Tensor):
            object.__setattr__(self, "samples", torch.as_tensor(np.asarray(self.samples, dtype=np.float64)))
        if self.samples.dim() != 1:
            raise InputValidationError(f"waveform must be 1-D, got shape {tuple(self.samples.shape)}")
        if not bool(torch.isfinite(self.samples.detach()).all()):
            raise InputValidationError("waveform contains NaN or Inf samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @classmethod
    def from_numpy(cls, samples: np.ndarray, sample_rate: int = DEFAULT_SAMPLE_RATE) -> "Waveform":
        return cls(torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float64)), sample_rate)

    def numpy(self) -> np.ndarray:
        return self.samples.detach().cpu().numpy()


@dataclass(frozen=True)
class FrameSequence:
    """Frame-level feature matrix (F0 frames, band energies, condition features)."""
    frames: torch.Tensor
    frame_shift: float = DEFAULT_FRAME_SHIFT
    start_time: float = 0.0

    def __post_init__(self):
        frames = self.frames
        if not isinstance(frames, torch.Tensor):
            frames = torch.as_tensor(np.asarray(frames, dtype=np.float64))
        if frames.dim() == 1:
            frames = frames[:, None]
        object.__setattr__(self, "frames", frames)
        if frames.dim() != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise InputValidationError(f"frame matrix must be (N>=1, D>=1), got {tuple(frames.shape)}")
        if self.frame_shift <= 0:
            raise ConfigurationError(f"frame_shift must be positive, got {self.frame_shift}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class StftConfig:
    """One FFT analysis configuration; lengths are in samples."""
    fft_size: int
    frame_length: int
    frame_shift: int
    window: WindowType = WindowType.HANN

    def __post_init__(self):
        object.__setattr__(self, "window", WindowType(self.window))
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ConfigurationError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 1 <= self.frame_length <= self.fft_size:
            raise ConfigurationError(
                f"frame_length must be in [1, fft_size={self.fft_size}], got {self.frame_length}")
        if self.frame_shift < 1:
            raise ConfigurationError(f"frame_shift must be >= 1, got {self.frame_shift}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_tensor(self, dtype=torch.float64) -> torch.Tensor:
        if self.window is WindowType.HANN:
            return torch.hann_window(self.frame_length, dtype=dtype)
        if self.window is WindowType.HAMMING:
            return torch.hamming_window(self.frame_length, dtype=dtype)
        return torch.ones(self.frame_length, dtype=dtype)

    @classmethod
    def from_dict(cls, values: dict) -> "StftConfig":
        try:
            return cls(int(values["fft_size"]), int(values["frame_length"]),
                       int(values["frame_shift"]), values.get("window", "hann"))
        except KeyError as e:
            raise ConfigurationError(f"STFT config is missing {e}") from e
        except ValueError as e:
            raise ConfigurationError(f"invalid STFT config {values}: {e}") from e

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "frame_length": self.frame_length,
                "frame_shift": self.frame_shift, "window": self.window.value}


@dataclass(frozen=True)
class SpectrumFrames:
    """One-sided complex spectra, (frames, fft_size/2 + 1)."""
    bins: torch.Tensor
    config: StftConfig = field(compare=False)

    def __post_init__(self):
        if self.bins.shape[-1] != self.config.num_bins:
            raise InputValidationError(
                f"expected {self.config.num_bins} bins, got {self.bins.shape[-1]}")

    @property
    def num_frames(self) -> int:
        return self.bins.shape[0]

    def power(self) -> torch.Tensor:
        return self.bins.real ** 2 + self.bins.imag ** 2


def frame_signal(samples: torch.Tensor, frame_length: int, frame_shift: int) -> torch.Tensor:
    """
    Cut a 1-D signal into (N, frame_length) frames, N = floor((T - L)/shift) + 1.
    A signal shorter than one frame yields a single zero-padded frame.
    """
    if samples.dim() != 1 or samples.shape[0] == 0:
        raise InputValidationError("framing needs a non-empty 1-D signal")
    if samples.shape[0] < frame_length:
        samples = F.pad(samples, (0, frame_length - samples.shape[0]))
    return samples.unfold(0, frame_length, frame_shift)


def stft_tensor(samples: torch.Tensor, config: StftConfig) -> torch.Tensor:
    """Differentiable one-sided STFT of a 1-D tensor, (N, K/2 + 1) complex."""
    frames = frame_signal(samples, config.frame_length, config.frame_shift)
    frames = frames * config.window_tensor(samples.dtype)
    return torch.fft.rfft(frames, n=config.fft_size, dim=-1)


def stft(waveform: Union[Waveform, torch.Tensor], config: StftConfig) -> SpectrumFrames:
    """
    Short-time Fourier transform: frame, window, zero-pad each frame to K and
    keep the K/2 + 1 non-negative-frequency bins.
    """
    samples = waveform.samples if isinstance(waveform, Waveform) else waveform
    return SpectrumFrames(stft_tensor(samples, config), config)


def moving_average(values: torch.Tensor, window: int) -> torch.Tensor:
    """
    Centred moving average along dim 0 of a (T, D) tensor. Sample t averages
    [t - window//2, t - window//2 + window - 1]; windows shrink at the edges
    instead of reading padded zeros.
    """
    if window < 1:
        raise ConfigurationError(f"smoothing window must be >= 1, got {window}")
    if window == 1:
        return values
    left = window // 2
    right = window - 1 - left
    x = values.transpose(0, 1)[:, None, :]
    kernel = torch.ones(1, 1, window, dtype=values.dtype, device=values.device)
    sums = F.conv1d(F.pad(x, (left, right)), kernel)
    ones = torch.ones(1, 1, values.shape[0], dtype=values.dtype, device=values.device)
    counts = F.conv1d(F.pad(ones, (left, right)), kernel)
    return (sums / counts)[:, 0, :].transpose(0, 1)


def upsampling_factor(frame_shift: float, sample_rate: int) -> int:
    """Samples per frame; must be an integer (80 for 5 ms at 16 kHz)."""
    factor = frame_shift * sample_rate
    rounded = int(round(factor))
    if rounded < 1 or abs(factor - rounded) > 1e-9:
        raise ConfigurationError(
            f"frame shift {frame_shift}s at {sample_rate} Hz is not an integer number of samples")
    return rounded


def upsample_and_smooth(frames: FrameSequence, sample_rate: int,
                        smooth_window: int = DEFAULT_SMOOTH_WINDOW,
                        smooth_passes: int = DEFAULT_SMOOTH_PASSES) -> torch.Tensor:
    """
    Repeat each frame by the up-sampling factor, then apply `smooth_passes`
    centred moving averages. Returns (N * factor, D). With zero passes the
    result is exact repetition (used for F0).
    """
    factor = upsampling_factor(frames.frame_shift, sample_rate)
    if smooth_window < 1:
        raise ConfigurationError(f"smoothing window must be >= 1, got {smooth_window}")
    if smooth_passes < 0:
        raise ConfigurationError(f"smooth_passes must be >= 0, got {smooth_passes}")
    upsampled = torch.repeat_interleave(frames.frames, factor, dim=0)
    for _ in range(smooth_passes):
        upsampled = moving_average(upsampled, smooth_window)
    return upsampled


def active_level(samples: torch.Tensor, sample_rate: int,
                 margin_db: float = ACTIVITY_MARGIN_DB) -> float:
    """
    RMS over the frames whose mean energy is within `margin_db` of the loudest
    frame. Leading and trailing samples more than `margin_db` below the peak
    sample are trimmed first. Frames are 20 ms, non-overlapping, starting at
    the first kept sample; a trailing partial frame counts.
    """
    x = samples.detach().to(torch.float64)
    magnitude = x.abs()
    loud = torch.nonzero(magnitude > magnitude.max() * 10.0 ** (-margin_db / 20.0)).squeeze(1)
    if loud.numel() == 0:
        raise InputValidationError("silent input")
    x = x[int(loud[0]):int(loud[-1]) + 1]
    frame_length = max(1, int(round(LEVEL_FRAME_SECONDS * sample_rate)))
    pad = (-x.shape[0]) % frame_length
    squares = F.pad(x, (0, pad)) ** 2
    frame_sums = squares.reshape(-1, frame_length).sum(dim=1)
    counts = torch.full_like(frame_sums, float(frame_length))
    counts[-1] = frame_length - pad
    energies = frame_sums / counts
    peak = energies.max()
    if peak <= 0:
        raise InputValidationError("silent input")
    active = energies >= peak * 10.0 ** (-margin_db / 10.0)
    return math.sqrt(float(frame_sums[active].sum() / counts[active].sum()))


def normalize_level(waveform: Waveform, target_dbov: float = TARGET_DBOV) -> Waveform:
    """
    Scale a waveform so its active level equals `target_dbov` (0 dBov is the
    RMS of a full-scale square wave).
    """
    if len(waveform) == 0:
        raise InputValidationError("silent input")
    level = active_level(waveform.samples, waveform.sample_rate)
    gain = 10.0 ** (target_dbov / 20.0) / level
    return Waveform(waveform.samples * gain, waveform.sample_rate)


def mu_law_encode(samples: torch.Tensor, quantization_channels: int = 1024) -> torch.Tensor:
    """Mu-law compand [-1, 1] samples and quantise to integer codes."""
    mu = quantization_channels - 1
    x = samples.clamp(-1.0, 1.0)
    companded = torch.sign(x) * torch.log1p(mu * x.abs()) / math.log1p(mu)
    return ((companded + 1) / 2 * mu + 0.5).floor().to(torch.int64)


def mu_law_decode(codes: torch.Tensor, quantization_channels: int = 1024,
                  dtype=torch.float64) -> torch.Tensor:
    """Inverse of `mu_law_encode` (up to quantisation)."""
    mu = quantization_channels - 1
    companded = 2 * codes.to(dtype) / mu - 1
    return torch.sign(companded) * torch.expm1(companded.abs() * math.log1p(mu)) / mu


def mel_band_edges(sample_rate: int, num_bands: int) -> np.ndarray:
    """Band edges (Hz) equally spaced on the mel scale from 0 to Nyquist."""
    top = 2595.0 * np.log10(1.0 + (sample_rate / 2) / 700.0)
    mels = np.linspace(0.0, top, num_bands + 1)
    return 700.0 * (10.0 ** (mels / 2595.0) - 1.0)


def log_band_energies(samples: torch.Tensor, sample_rate: int, frame_shift: int,
                      num_bands: int = 16, config: StftConfig = None) -> torch.Tensor:
    """
    Log energies of `num_bands` mel-spaced rectangular bands, one row per
    `frame_shift` samples: returns (T // frame_shift, num_bands). Frames are
    centred on their hop by symmetric zero padding.
    """
    if config is None:
        config = StftConfig(512, 4 * frame_shift, frame_shift)
    num_frames = samples.shape[0] // frame_shift
    if num_frames < 1:
        raise InputValidationError("signal shorter than one frame shift")
    half = (config.frame_length - frame_shift) // 2
    padded = F.pad(samples, (half, config.frame_length))
    power = stft(padded, config).power()[:num_frames]

    freqs = np.arange(config.num_bins) * sample_rate / config.fft_size
    edges = mel_band_edges(sample_rate, num_bands)
    bands = []
    for b in range(num_bands):
        upper = edges[b + 1] if b < num_bands - 1 else np.inf
        idx = np.nonzero((freqs >= edges[b]) & (freqs < upper))[0]
        if idx.size == 0:
            idx = np.array([int(np.argmin(np.abs(freqs - 0.5 * (edges[b] + edges[b + 1]))))])
        bands.append(power[:, torch.from_numpy(idx)].sum(dim=1))
    return torch.log(torch.stack(bands, dim=1) + 1e-10)
