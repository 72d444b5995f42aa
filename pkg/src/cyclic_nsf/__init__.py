"""
Cyclic-noise source signals, masked spectral loss and a toy harmonic-plus-noise
neural source-filter vocoder.
"""

__version__ = "0.1.0"

from .audio_io import F0Track, read_f0, read_wav, write_f0, write_wav
from .config_loader import load_config
from .dataset import estimate_f0, make_synthetic_dataset
from .logging_config import get_logger, setup_logging
from .losses import LossConfig, masked_spectral_loss, spectral_amplitude_loss, total_training_loss
from .signal_core import FrameSequence, StftConfig, Waveform, stft, upsample_and_smooth
from .sinc_filter import SincFilterSpec, combine_hn, filter_timevariant
from .source_module import SourceConfig, gen_cyclic_noise, gen_pulse_train, gen_sine_harmonic
from .toy_nsf import ModelConfig, ToyNsfModel, backward
from .training import TrainConfig, train

__all__ = [
    "F0Track",
    "read_f0",
    "read_wav",
    "write_f0",
    "write_wav",
    "load_config",
    "estimate_f0",
    "make_synthetic_dataset",
    "get_logger",
    "setup_logging",
    "LossConfig",
    "masked_spectral_loss",
    "spectral_amplitude_loss",
    "total_training_loss",
    "FrameSequence",
    "StftConfig",
    "Waveform",
    "stft",
    "upsample_and_smooth",
    "SincFilterSpec",
    "combine_hn",
    "filter_timevariant",
    "SourceConfig",
    "gen_cyclic_noise",
    "gen_pulse_train",
    "gen_sine_harmonic",
    "ModelConfig",
    "ToyNsfModel",
    "backward",
    "TrainConfig",
    "train",
]
