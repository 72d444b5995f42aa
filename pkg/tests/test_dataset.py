"""
Tests for the synthetic corpus, the pitch tracker and F0 agreement.
"""
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from cyclic_nsf.audio_io import F0Track
from cyclic_nsf.dataset import (
    DatasetConfig,
    dataset_from_config,
    estimate_f0,
    f0_agreement,
    make_synthetic_dataset,
    voicing_interior,
)
from cyclic_nsf.errors import ConfigurationError
from cyclic_nsf.signal_core import Waveform, active_level, mu_law_decode, mu_law_encode


def sine(f0_hz: float, seconds: float = 0.5, amplitude: float = 0.5) -> Waveform:
    t = torch.arange(int(seconds * 16000), dtype=torch.float64) / 16000
    return Waveform(amplitude * torch.sin(2 * math.pi * f0_hz * t))


@pytest.mark.unit
class TestDatasetConfig:

    @pytest.mark.parametrize("values", [
        {"train_utterances": 0},
        {"min_duration": 1.0, "max_duration": 0.5},
        {"f0_min": 300.0, "f0_max": 80.0},
        {"frame_shift": 0.0033},
        {"quantization_channels": 1},
    ])
    def test_invalid(self, values):
        with pytest.raises(ConfigurationError):
            DatasetConfig(**values)

    def test_round_trip(self):
        cfg = DatasetConfig(train_utterances=4, seed=3)
        assert DatasetConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.unit
class TestSyntheticDataset:

    def test_sizes_and_alignment(self, small_dataset):
        assert len(small_dataset.train) == 2 and len(small_dataset.validation) == 1
        for utt in small_dataset.train + small_dataset.validation:
            assert len(utt.waveform) == utt.num_frames * 80
            assert utt.features.frames.shape == (utt.num_frames, 16)
            assert 0.3 <= utt.waveform.duration <= 0.4 + 0.005

    def test_f0_range_and_unvoiced_zero(self, small_dataset):
        for utt in small_dataset.train:
            values = utt.f0.values
            voiced = values[values > 0]
            assert voiced.numel() > 0
            assert float(voiced.min()) >= 80.0 and float(voiced.max()) <= 300.0
            assert bool(((values == 0) | ((values >= 80.0) & (values <= 300.0))).all())

    def test_level(self, small_dataset):
        utt = small_dataset.train[0]
        level_db = 20 * math.log10(active_level(utt.waveform.samples, 16000))
        assert level_db == pytest.approx(-26.0, abs=1e-6)

    def test_fixed_seed(self):
        a = make_synthetic_dataset(2, (0.3, 0.4), rng=5, validation_utts=1)
        b = make_synthetic_dataset(2, (0.3, 0.4), rng=5, validation_utts=1)
        for x, y in zip(a.train + a.validation, b.train + b.validation):
            assert x.name == y.name
            assert torch.equal(x.waveform.samples, y.waveform.samples)
            assert torch.equal(x.f0.values, y.f0.values)

    def test_different_seeds_differ(self):
        a = make_synthetic_dataset(1, (0.3, 0.4), rng=1, validation_utts=0)
        b = make_synthetic_dataset(1, (0.3, 0.4), rng=2, validation_utts=0)
        assert not torch.equal(a.train[0].f0.values, b.train[0].f0.values)

    def test_from_config(self):
        dataset = dataset_from_config(DatasetConfig(train_utterances=1, validation_utterances=1,
                                                    min_duration=0.2, max_duration=0.2))
        assert len(dataset) == 2
        assert dataset.train[0].num_frames == 40

    def test_mu_law_quantised_targets(self):
        base = DatasetConfig(train_utterances=1, validation_utterances=0, min_duration=0.2, max_duration=0.2)
        plain = dataset_from_config(base).train[0].waveform.samples
        quantised = dataset_from_config(replace(base, quantization_channels=256)).train[0].waveform.samples
        assert torch.equal(mu_law_decode(mu_law_encode(quantised, 256), 256), quantised)
        assert not torch.equal(quantised, plain)
        assert float((quantised - plain).abs().max()) < 0.05

    def test_tracker_agrees_with_ground_truth(self, small_dataset):
        for utt in small_dataset.train + small_dataset.validation:
            estimated = estimate_f0(utt.waveform, utt.f0.frame_shift)
            agreement = f0_agreement(estimated, utt.f0, tolerance=0.02, boundary_margin=4)
            assert agreement.voiced_frames > 0
            assert agreement.fraction >= 0.9, agreement.to_dict()


@pytest.mark.unit
class TestEstimateF0:

    def test_pure_sine(self):
        track = estimate_f0(sine(100.0))
        interior = track.values[10:-10]
        assert bool((interior > 0).all())
        assert float((interior - 100.0).abs().max()) <= 1.0

    @pytest.mark.parametrize("f0_hz", [80.0, 137.0, 250.0])
    def test_harmonic_tone(self, f0_hz):
        t = torch.arange(8000, dtype=torch.float64) / 16000
        tone = sum(torch.sin(2 * math.pi * h * f0_hz * t) / h for h in range(1, 7))
        track = estimate_f0(Waveform(0.1 * tone))
        interior = track.values[10:-10]
        assert float(((interior - f0_hz).abs() / f0_hz).max()) <= 0.01

    def test_dc_offset_is_ignored(self):
        base = sine(100.0, amplitude=0.1)
        track = estimate_f0(Waveform(base.samples + 0.5))
        interior = track.values[10:-10]
        assert bool((interior > 0).all())
        assert float((interior - 100.0).abs().max()) <= 1.0

    def test_white_noise_mostly_unvoiced(self):
        noise = torch.from_numpy(np.random.default_rng(0).standard_normal(16000) * 0.1)
        track = estimate_f0(Waveform(noise))
        assert float((track.values == 0).double().mean()) >= 0.9

    def test_silence(self):
        track = estimate_f0(Waveform(torch.zeros(4000, dtype=torch.float64)))
        assert len(track) == 50
        assert float(track.values.abs().max()) == 0.0

    def test_invalid_range(self):
        with pytest.raises(ConfigurationError):
            estimate_f0(sine(100.0), fmin=400.0, fmax=60.0)


@pytest.mark.unit
class TestAgreement:

    def test_counts(self):
        reference = F0Track(torch.tensor([0.0, 100.0, 100.0, 200.0, 0.0]))
        estimated = F0Track(torch.tensor([50.0, 101.0, 0.0, 260.0, 0.0]))
        agreement = f0_agreement(estimated, reference, 0.05)
        assert (agreement.voiced_frames, agreement.matched_frames) == (3, 1)
        assert agreement.fraction == pytest.approx(1 / 3)
        assert agreement.mean_relative_error == pytest.approx((0.01 + 1.0 + 0.3) / 3)

    def test_all_unvoiced_reference(self):
        agreement = f0_agreement(F0Track(torch.ones(4)), F0Track(torch.zeros(4)))
        assert agreement.voiced_frames == 0 and agreement.fraction == 1.0

    def test_interior_margin(self):
        reference = F0Track(torch.tensor([0.0] + [120.0] * 6 + [0.0]))
        assert voicing_interior(reference, 0).tolist() == [False] + [True] * 6 + [False]
        assert voicing_interior(reference, 2).tolist() == [False] * 3 + [True] * 2 + [False] * 3
