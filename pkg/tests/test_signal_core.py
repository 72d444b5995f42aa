"""
Tests for framing, STFT, up-sampling and level utilities.
"""
import math

import numpy as np
import pytest
import torch

from cyclic_nsf.errors import ConfigurationError, InputValidationError
from cyclic_nsf.signal_core import (
    FrameSequence,
    StftConfig,
    Waveform,
    active_level,
    frame_signal,
    log_band_energies,
    moving_average,
    mu_law_decode,
    mu_law_encode,
    normalize_level,
    stft,
    upsample_and_smooth,
    upsampling_factor,
)


@pytest.mark.unit
class TestContainers:

    def test_waveform_rejects_nan(self):
        with pytest.raises(InputValidationError):
            Waveform(torch.tensor([0.0, float("nan")]))

    def test_waveform_rejects_bad_rate(self):
        with pytest.raises(ConfigurationError):
            Waveform(torch.zeros(4), 0)

    def test_frame_sequence_promotes_vector(self):
        frames = FrameSequence(torch.arange(5.0))
        assert frames.frames.shape == (5, 1)
        assert frames.num_frames == 5

    def test_stft_config_validation(self):
        with pytest.raises(ConfigurationError):
            StftConfig(500, 320, 80)
        with pytest.raises(ConfigurationError):
            StftConfig(256, 320, 80)
        assert StftConfig(512, 320, 80).num_bins == 257

    def test_stft_config_from_dict(self):
        cfg = StftConfig.from_dict({"fft_size": 128, "frame_length": 80, "frame_shift": 40})
        assert cfg.to_dict() == {"fft_size": 128, "frame_length": 80, "frame_shift": 40, "window": "hann"}
        with pytest.raises(ConfigurationError, match="missing"):
            StftConfig.from_dict({"fft_size": 128})


@pytest.mark.unit
class TestStft:

    def test_frame_count(self):
        frames = frame_signal(torch.zeros(1000, dtype=torch.float64), 320, 80)
        assert frames.shape == (math.floor((1000 - 320) / 80) + 1, 320)

    def test_short_signal_yields_one_padded_frame(self):
        frames = frame_signal(torch.ones(10, dtype=torch.float64), 32, 8)
        assert frames.shape == (1, 32)
        assert float(frames.sum()) == 10.0

    def test_matches_naive_dft(self):
        gen = np.random.default_rng(3)
        x = torch.from_numpy(gen.standard_normal(300))
        cfg = StftConfig(128, 80, 40)
        spectrum = stft(x, cfg).bins.numpy()

        window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(80) / 80)
        k = np.arange(cfg.num_bins)[:, None]
        n = np.arange(80)[None, :]
        basis = np.exp(-2j * np.pi * k * n / 128)
        for frame in range(spectrum.shape[0]):
            segment = x.numpy()[frame * 40:frame * 40 + 80] * window
            np.testing.assert_allclose(spectrum[frame], basis @ segment, atol=1e-9)

    def test_power_of_sine_peaks_at_its_bin(self):
        t = torch.arange(2048, dtype=torch.float64)
        x = torch.sin(2 * math.pi * 16 * t / 512)
        power = stft(x, StftConfig(512, 512, 256)).power()
        assert int(power[0].argmax()) == 16

    def test_rect_window_satisfies_parseval(self):
        x = torch.randn(128, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
        power = stft(x, StftConfig(128, 128, 128, window="rect")).power()[0].numpy()
        two_sided = power[0] + power[64] + 2 * power[1:64].sum()
        energy = float((x ** 2).sum())
        assert two_sided / 128 == pytest.approx(energy, rel=1e-9)


@pytest.mark.unit
class TestUpsampling:

    def test_factor(self):
        assert upsampling_factor(0.005, 16000) == 80
        with pytest.raises(ConfigurationError):
            upsampling_factor(0.0051, 16000)

    def test_repetition_without_smoothing(self):
        frames = FrameSequence(torch.tensor([[1.0], [2.0], [3.0]], dtype=torch.float64))
        out = upsample_and_smooth(frames, 16000, smooth_passes=0)
        assert out.shape == (240, 1)
        assert torch.equal(out[:80, 0], torch.ones(80, dtype=torch.float64))
        assert float(out[160, 0]) == 3.0

    def test_smoothing_preserves_constants(self):
        frames = FrameSequence(torch.full((6, 2), 4.0, dtype=torch.float64))
        out = upsample_and_smooth(frames, 16000)
        assert torch.allclose(out, torch.full_like(out, 4.0))

    def test_moving_average_interior_and_edges(self):
        x = torch.arange(10, dtype=torch.float64)[:, None]
        out = moving_average(x, 3)[:, 0]
        assert float(out[5]) == pytest.approx(5.0)
        assert float(out[0]) == pytest.approx(0.5)
        assert float(out[9]) == pytest.approx(8.5)

    def test_smoothing_softens_steps(self):
        frames = FrameSequence(torch.tensor([[0.0], [1.0]], dtype=torch.float64))
        out = upsample_and_smooth(frames, 16000, smooth_window=40, smooth_passes=1)[:, 0]
        assert 0.0 < float(out[79]) < 1.0
        assert torch.all(out[1:] >= out[:-1] - 1e-12)

    def test_step_sequence_matches_direct_average(self):
        frames = FrameSequence(torch.tensor([0.0] * 5 + [1.0] * 5, dtype=torch.float64)[:, None])
        out = upsample_and_smooth(frames, 16000, smooth_window=320, smooth_passes=2)[:, 0].numpy()

        expected = np.repeat([0.0] * 5 + [1.0] * 5, 80)
        for _ in range(2):
            expected = np.array([expected[max(0, t - 160):t + 160].mean() for t in range(800)])
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)
        assert np.all(np.diff(out) >= -1e-12)


@pytest.mark.unit
class TestLevels:

    def test_normalize_level_hits_target(self):
        t = torch.arange(16000, dtype=torch.float64)
        wave = Waveform(0.3 * torch.sin(2 * math.pi * 200 * t / 16000))
        normalized = normalize_level(wave)
        level_db = 20 * math.log10(active_level(normalized.samples, 16000))
        assert level_db == pytest.approx(-26.0, abs=1e-6)

    def test_normalize_level_is_idempotent(self):
        t = torch.arange(16000, dtype=torch.float64)
        once = normalize_level(Waveform(0.3 * torch.sin(2 * math.pi * 200 * t / 16000)))
        twice = normalize_level(once)
        gain = float(twice.samples.abs().max() / once.samples.abs().max())
        assert gain == pytest.approx(1.0, abs=1e-6)

    def test_full_scale_square_wave_is_zero_dbov(self):
        square = torch.tensor(([1.0] * 40 + [-1.0] * 40) * 200, dtype=torch.float64)
        assert active_level(square, 16000) == pytest.approx(1.0, abs=1e-12)
        normalized = normalize_level(Waveform(square))
        rms = math.sqrt(float((normalized.samples ** 2).mean()))
        assert rms == pytest.approx(10.0 ** (-26.0 / 20.0), rel=1e-9)

    def test_silence_around_a_burst_is_ignored(self):
        t = torch.arange(4000, dtype=torch.float64)
        burst = 0.5 * torch.sin(2 * math.pi * 440 * t / 16000)
        padded = torch.cat([torch.zeros(8100, dtype=torch.float64), burst,
                            torch.zeros(3900, dtype=torch.float64)])
        normalized = normalize_level(Waveform(padded))
        gain = float(normalized.samples.abs().max() / padded.abs().max())
        cropped_rms = math.sqrt(float((burst ** 2).mean()))
        assert gain == pytest.approx(10.0 ** (-26.0 / 20.0) / cropped_rms, rel=1e-3)

    def test_silent_input_rejected(self):
        with pytest.raises(InputValidationError, match="silent"):
            normalize_level(Waveform(torch.zeros(800, dtype=torch.float64)))

    def test_mu_law_is_close_to_identity(self):
        x = torch.linspace(-1, 1, 101, dtype=torch.float64)
        decoded = mu_law_decode(mu_law_encode(x))
        assert float((decoded - x).abs().max()) < 0.01
        assert int(mu_law_encode(torch.tensor([1.0])).max()) == 1023

    def test_log_band_energies_shape(self):
        x = torch.randn(1600, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        bands = log_band_energies(x, 16000, 80, 16)
        assert bands.shape == (20, 16)
        assert bool(torch.isfinite(bands).all())
