"""
Pytest configuration and shared fixtures.
"""
import sys
from pathlib import Path

import pytest
import torch

# Add project root and src directory to Python path for imports
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from cyclic_nsf.audio_io import F0Track
from cyclic_nsf.dataset import make_synthetic_dataset
from cyclic_nsf.source_module import SourceConfig
from cyclic_nsf.toy_nsf import ModelConfig


@pytest.fixture
def rng():
    """Factory for seeded torch generators."""
    def make(seed: int = 0) -> torch.Generator:
        generator = torch.Generator()
        generator.manual_seed(seed)
        return generator
    return make


@pytest.fixture
def source_config():
    return SourceConfig()


@pytest.fixture
def constant_f0():
    """Sample-level F0 at 16 kHz: `hz` for `seconds`."""
    def make(hz: float = 100.0, seconds: float = 0.1) -> torch.Tensor:
        return torch.full((int(round(seconds * 16000)),), float(hz), dtype=torch.float64)
    return make


@pytest.fixture
def f0_track():
    """20 frames: 5 unvoiced, 10 voiced at 120 Hz, 5 unvoiced."""
    return F0Track(torch.tensor([0.0] * 5 + [120.0] * 10 + [0.0] * 5), 0.005)


@pytest.fixture
def tiny_model_config():
    """Narrow float64 model, small enough for finite differences."""
    return ModelConfig(feature_dim=4, channels=2, num_layers=2, dtype="float64",
                       smooth_window=16, source=SourceConfig(harmonics=2))


@pytest.fixture(scope="session")
def small_dataset():
    return make_synthetic_dataset(2, (0.3, 0.4), rng=0, validation_utts=1)


@pytest.fixture
def project_root():
    """Return the project root directory."""
    return Path(__file__).parent.parent


@pytest.fixture
def config_file(tmp_path):
    """Write a YAML config and return its path."""
    def write(text: str) -> Path:
        path = tmp_path / "config.yaml"
        path.write_text(text)
        return path
    return write
