"""
Windowed-sinc low-pass / high-pass pair with a per-frame cut-off, and the
harmonic-plus-noise output combination o = LP(o_harmonic) + HP(o_noise).

Cut-offs are normalised frequencies (cycles per sample, MVF / N_s).
"""
from dataclasses import dataclass
from enum import Enum
from typing import Union

import torch

from .errors import ConfigurationError, InputValidationError

DEFAULT_ORDER = 31
DEFAULT_CUTOFF_HZ = 5000.0


class FilterKind(str, Enum):
    LOWPASS = "lowpass"
    HIGHPASS = "highpass"


@dataclass(frozen=True)
class SincFilterSpec:
    cutoff_track: torch.Tensor
    order: int = DEFAULT_ORDER
    window: str = "hamming"

    def __post_init__(self):
        track = torch.as_tensor(self.cutoff_track, dtype=torch.float64)
        if track.dim() == 0:
            track = track[None]
        object.__setattr__(self, "cutoff_track", track)
        if self.order < 1 or self.order % 2 == 0:
            raise ConfigurationError(f"sinc filter order must be odd, got {self.order}")
        if self.window != "hamming":
            raise ConfigurationError(f"unsupported sinc window '{self.window}'")
        _check_cutoff(track)

    @property
    def num_frames(self) -> int:
        return self.cutoff_track.shape[0]

    @classmethod
    def constant(cls, cutoff_hz: float, sample_rate: int, num_frames: int,
                 order: int = DEFAULT_ORDER) -> "SincFilterSpec":
        """A constant maximum-voiced-frequency track."""
        return cls(torch.full((num_frames,), cutoff_hz / sample_rate, dtype=torch.float64), order)


def _check_cutoff(cutoff: torch.Tensor) -> None:
    if not bool(((cutoff > 0) & (cutoff < 0.5)).all()):
        raise ConfigurationError("normalised cut-off must lie in (0, 0.5) for every frame")


def design_lowpass(cutoff: Union[float, torch.Tensor], order: int = DEFAULT_ORDER) -> torch.Tensor:
    """
    h[n] = 2c sinc(2c (n - (M-1)/2)) hamming(n), scaled to unity DC gain.
    A tensor of F cut-offs gives an (F, M) coefficient matrix.
    """
    cutoff = torch.as_tensor(cutoff, dtype=torch.float64)
    _check_cutoff(cutoff)
    if order < 1 or order % 2 == 0:
        raise ConfigurationError(f"sinc filter order must be odd, got {order}")
    n = torch.arange(order, dtype=torch.float64) - (order - 1) / 2
    window = torch.hamming_window(order, periodic=False, dtype=torch.float64)
    c = cutoff[..., None]
    taps = 2 * c * torch.sinc(2 * c * n) * window
    return taps / taps.sum(dim=-1, keepdim=True)


def design_highpass(cutoff: Union[float, torch.Tensor], order: int = DEFAULT_ORDER) -> torch.Tensor:
    """Spectral inversion of the low-pass: delta(n - (M-1)/2) - h_lp[n]."""
    lowpass = design_lowpass(cutoff, order)
    highpass = -lowpass
    centre = (order - 1) // 2
    highpass[..., centre] = 1.0 - lowpass[..., centre]
    return highpass


def filter_timevariant(signal: torch.Tensor, spec: SincFilterSpec, frame_shift: int,
                       kind: FilterKind = FilterKind.LOWPASS) -> torch.Tensor:
    """
    Filter with the coefficients of the frame each output sample belongs to.
    Zero-padded at the edges; the (M-1)/2 group delay is compensated so the
    output is aligned with the input and has the same length.
    """
    if signal.dim() != 1:
        raise InputValidationError("time-variant filtering expects a 1-D signal")
    if frame_shift < 1:
        raise ConfigurationError(f"frame_shift must be >= 1, got {frame_shift}")
    length = signal.shape[0]
    needed = -(-length // frame_shift)
    if spec.num_frames < needed:
        raise InputValidationError(
            f"cut-off track has {spec.num_frames} frames, signal needs {needed}")

    design = design_lowpass if FilterKind(kind) is FilterKind.LOWPASS else design_highpass
    coef = design(spec.cutoff_track[:needed], spec.order).to(signal.dtype)
    coef = torch.repeat_interleave(coef, frame_shift, dim=0)[:length]

    half = (spec.order - 1) // 2
    padded = torch.nn.functional.pad(signal, (half, half))
    # windows[t, j] = x[t + half - j]
    windows = padded.unfold(0, spec.order, 1).flip(-1)
    return (coef * windows).sum(dim=-1)


def combine_hn(harmonic_out: torch.Tensor, noise_out: torch.Tensor, spec: SincFilterSpec,
               frame_shift: int) -> torch.Tensor:
    """o = LP(harmonic branch) + HP(noise branch)."""
    if harmonic_out.shape != noise_out.shape:
        raise InputValidationError(
            f"branch outputs differ in shape: {tuple(harmonic_out.shape)} vs {tuple(noise_out.shape)}")
    return (filter_timevariant(harmonic_out, spec, frame_shift, FilterKind.LOWPASS)
            + filter_timevariant(noise_out, spec, frame_shift, FilterKind.HIGHPASS))
