"""
Desk-scale synthetic speech-like corpus, an NCCF pitch tracker and F0
agreement statistics.

Each synthetic utterance alternates unvoiced and voiced segments. Voiced
segments are a six-harmonic tone with 1/h amplitudes and a frame-constant F0
that glides slowly inside [80, 300] Hz; the whole signal carries noise 30 dB
below the voiced level and is normalised to -26 dBov.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import F0Track
from .config_loader import check_keys
from .errors import ConfigurationError
from .logging_config import get_logger
from .signal_core import (
    DEFAULT_FRAME_SHIFT,
    DEFAULT_SAMPLE_RATE,
    FrameSequence,
    Waveform,
    log_band_energies,
    mu_law_decode,
    mu_law_encode,
    normalize_level,
    upsampling_factor,
)

logger = get_logger(__name__)

VOICING_CLARITY = 0.3
# among lags within this fraction of the best NCCF peak the shortest wins
PEAK_SELECT_RATIO = 0.9
SILENCE_DB = -60.0


@dataclass(frozen=True)
class DatasetConfig:
    train_utterances: int = 32
    validation_utterances: int = 8
    min_duration: float = 0.5
    max_duration: float = 1.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_shift: float = DEFAULT_FRAME_SHIFT
    num_bands: int = 16
    harmonics: int = 6
    f0_min: float = 80.0
    f0_max: float = 300.0
    noise_db: float = -30.0
    seed: int = 0
    # mu-law levels applied to the target waveforms; None keeps them continuous
    quantization_channels: Optional[int] = None

    def __post_init__(self):
        if self.train_utterances < 1:
            raise ConfigurationError("the dataset needs at least one training utterance")
        if self.validation_utterances < 0:
            raise ConfigurationError("validation_utterances must be >= 0")
        if not 0 < self.min_duration <= self.max_duration:
            raise ConfigurationError(
                f"invalid duration range ({self.min_duration}, {self.max_duration})")
        if not 0 < self.f0_min < self.f0_max < self.sample_rate / 2:
            raise ConfigurationError(f"invalid F0 range ({self.f0_min}, {self.f0_max})")
        if self.quantization_channels is not None and self.quantization_channels < 2:
            raise ConfigurationError(
                f"quantization_channels must be >= 2, got {self.quantization_channels}")
        upsampling_factor(self.frame_shift, self.sample_rate)

    @property
    def duration(self) -> Tuple[float, float]:
        return self.min_duration, self.max_duration

    @classmethod
    def from_dict(cls, values: dict) -> "DatasetConfig":
        check_keys(values, cls.__dataclass_fields__, "dataset config")
        return cls(**values)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class Utterance:
    name: str
    waveform: Waveform
    f0: F0Track
    features: FrameSequence

    @property
    def num_frames(self) -> int:
        return len(self.f0)


@dataclass
class SyntheticDataset:
    train: List[Utterance]
    validation: List[Utterance] = field(default_factory=list)

    def __len__(self):
        return len(self.train) + len(self.validation)


def _segment_f0(num_frames: int, cfg: DatasetConfig, rng: np.random.Generator) -> np.ndarray:
    """Alternating unvoiced / voiced frame segments; voiced F0 glides linearly."""
    f0 = np.zeros(num_frames)
    frame = 0
    voiced = bool(rng.random() < 0.5)
    while frame < num_frames:
        if voiced:
            length = int(rng.integers(30, 80))
            start = rng.uniform(cfg.f0_min * 1.25, cfg.f0_max * 0.85)
            end = float(np.clip(start * rng.uniform(0.85, 1.15), cfg.f0_min, cfg.f0_max))
            stop = min(frame + length, num_frames)
            f0[frame:stop] = np.linspace(start, end, length)[:stop - frame]
        else:
            length = int(rng.integers(8, 25))
        frame += length
        voiced = not voiced
    if not (f0 > 0).any():
        f0[num_frames // 4: 3 * num_frames // 4] = 0.5 * (cfg.f0_min + cfg.f0_max)
    return f0


def synthesize_utterance(num_frames: int, cfg: DatasetConfig,
                         rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Waveform samples and frame-level ground-truth F0 for one utterance."""
    hop = upsampling_factor(cfg.frame_shift, cfg.sample_rate)
    f0_frames = _segment_f0(num_frames, cfg, rng)
    f0 = np.repeat(f0_frames, hop)
    phase = 2 * math.pi * np.cumsum(f0) / cfg.sample_rate + rng.uniform(-math.pi, math.pi)
    tone = sum(np.sin(h * phase) / h for h in range(1, cfg.harmonics + 1))

    # one-frame linear ramps at voicing boundaries
    envelope = np.convolve((f0 > 0).astype(np.float64), np.ones(hop) / hop, mode="same")
    voiced = envelope * tone
    level = np.sqrt(np.mean(voiced[f0 > 0] ** 2))
    noise = rng.standard_normal(f0.shape[0]) * level * 10.0 ** (cfg.noise_db / 20.0)
    return voiced + noise, f0_frames


def make_utterance(name: str, duration: float, cfg: DatasetConfig,
                   rng: np.random.Generator) -> Utterance:
    hop = upsampling_factor(cfg.frame_shift, cfg.sample_rate)
    num_frames = max(1, int(round(duration / cfg.frame_shift)))
    samples, f0_frames = synthesize_utterance(num_frames, cfg, rng)
    waveform = normalize_level(Waveform.from_numpy(samples, cfg.sample_rate))
    if cfg.quantization_channels is not None:
        codes = mu_law_encode(waveform.samples, cfg.quantization_channels)
        waveform = Waveform(mu_law_decode(codes, cfg.quantization_channels), cfg.sample_rate)
    features = log_band_energies(waveform.samples, cfg.sample_rate, hop, cfg.num_bands)
    return Utterance(
        name=name,
        waveform=waveform,
        f0=F0Track(torch.from_numpy(f0_frames), cfg.frame_shift),
        features=FrameSequence(features, cfg.frame_shift),
    )


def make_synthetic_dataset(n_utts: int = 32, duration: Tuple[float, float] = (0.5, 1.0),
                           rng: Union[int, np.random.Generator, None] = None,
                           validation_utts: int = 8,
                           config: Optional[DatasetConfig] = None) -> SyntheticDataset:
    """
    Build `n_utts` training and `validation_utts` validation utterances with
    durations drawn uniformly from `duration` seconds. `rng` may be a seed.
    """
    base = config or DatasetConfig()
    cfg = DatasetConfig(**{**base.to_dict(), "train_utterances": n_utts,
                           "validation_utterances": validation_utts,
                           "min_duration": duration[0], "max_duration": duration[1]})
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(cfg.seed if rng is None else rng)

    def build(prefix: str, count: int) -> List[Utterance]:
        return [make_utterance(f"{prefix}_{i:03d}", rng.uniform(*cfg.duration), cfg, rng)
                for i in range(count)]

    dataset = SyntheticDataset(build("train", n_utts), build("val", validation_utts))
    logger.info(f"Synthetic dataset: {len(dataset.train)} train / {len(dataset.validation)} "
                f"validation utterances, {cfg.min_duration}-{cfg.max_duration} s")
    return dataset


def dataset_from_config(cfg: DatasetConfig) -> SyntheticDataset:
    return make_synthetic_dataset(cfg.train_utterances, cfg.duration, cfg.seed,
                                  cfg.validation_utterances, cfg)


def estimate_f0(waveform: Waveform, frame_shift: float = DEFAULT_FRAME_SHIFT,
                fmin: float = 60.0, fmax: float = 400.0,
                clarity: float = VOICING_CLARITY) -> F0Track:
    """
    Frame-wise normalised cross-correlation pitch tracker. Frame n is centred
    on sample n*hop + hop/2 and analysed over a window twice the longest lag.
    A frame is voiced when its NCCF peak reaches `clarity`; the shortest lag
    whose local peak is within 90% of the best one gives the period, refined
    by parabolic interpolation.
    """
    sr = waveform.sample_rate
    if not 0 < fmin < fmax < sr / 2:
        raise ConfigurationError(f"pitch search range must satisfy 0 < fmin < fmax < {sr / 2}")
    hop = upsampling_factor(frame_shift, sr)
    x = waveform.numpy()
    num_frames = len(x) // hop
    min_lag = max(2, int(math.floor(sr / fmax)))
    max_lag = int(math.ceil(sr / fmin))
    window = 2 * max_lag

    values = np.zeros(num_frames)
    if num_frames == 0:
        return F0Track(torch.from_numpy(values), frame_shift)
    padded = np.pad(x, (window // 2, window + max_lag + hop))
    peak_energy = max(float(np.max(x ** 2)) if len(x) else 0.0, 1e-300)
    floor = peak_energy * 10.0 ** (SILENCE_DB / 10.0)

    for n in range(num_frames):
        start = n * hop + hop // 2
        segment = padded[start:start + window + max_lag + 2]
        a = segment[:window] - segment[:window].mean()
        energy_a = float(a @ a)
        if energy_a / window < floor:
            continue
        shifted = sliding_window_view(segment[min_lag - 1:], window)[:max_lag - min_lag + 3]
        shifted = shifted - shifted.mean(axis=1, keepdims=True)
        energy_b = np.einsum("ij,ij->i", shifted, shifted)
        nccf = (shifted @ a) / np.sqrt(np.maximum(energy_a * energy_b, 1e-300))
        # nccf[i] is lag min_lag - 1 + i; interior entries are the searched lags
        inner = nccf[1:-1]
        best = float(inner.max())
        if best < clarity:
            continue
        is_peak = (inner >= nccf[:-2]) & (inner >= nccf[2:]) & (inner >= PEAK_SELECT_RATIO * best)
        i = int(np.argmax(is_peak) if is_peak.any() else np.argmax(inner)) + 1
        left, centre, right = nccf[i - 1], nccf[i], nccf[i + 1]
        denom = left - 2 * centre + right
        offset = 0.5 * (left - right) / denom if denom < 0 else 0.0
        lag = (min_lag - 1 + i) + float(np.clip(offset, -0.5, 0.5))
        values[n] = sr / lag
    return F0Track(torch.from_numpy(values), frame_shift)


@dataclass(frozen=True)
class F0Agreement:
    voiced_frames: int
    matched_frames: int
    mean_relative_error: float

    @property
    def fraction(self) -> float:
        return self.matched_frames / self.voiced_frames if self.voiced_frames else 1.0

    def to_dict(self) -> dict:
        return {"voiced_frames": self.voiced_frames, "matched_frames": self.matched_frames,
                "fraction": self.fraction, "mean_relative_error": self.mean_relative_error}


def voicing_interior(reference: F0Track, margin: int) -> np.ndarray:
    """Voiced frames at least `margin` frames away from any voicing change."""
    voiced = reference.values.numpy() > 0
    if margin <= 0:
        return voiced
    unvoiced = np.pad(~voiced, margin, constant_values=True)
    near_unvoiced = sliding_window_view(unvoiced, 2 * margin + 1).any(axis=1)
    return voiced & ~near_unvoiced


def f0_agreement(estimated: F0Track, reference: F0Track, tolerance: float = 0.05,
                 boundary_margin: int = 0) -> F0Agreement:
    """
    Share of reference-voiced frames whose estimate is within `tolerance`
    (relative). An unvoiced estimate on a voiced frame counts as a miss.
    """
    length = min(len(estimated), len(reference))
    ref_track = F0Track(reference.values[:length], reference.frame_shift)
    ref = ref_track.values.numpy()
    est = estimated.values[:length].numpy()
    mask = voicing_interior(ref_track, boundary_margin)
    if not mask.any():
        return F0Agreement(0, 0, 0.0)
    relative = np.abs(est[mask] - ref[mask]) / ref[mask]
    return F0Agreement(int(mask.sum()), int((relative <= tolerance).sum()), float(relative.mean()))
