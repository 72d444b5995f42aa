"""
Tests for the training loop, best-epoch selection and the named model rows.
"""
import math
from dataclasses import replace

import pytest
import torch

from cyclic_nsf.dataset import SyntheticDataset, estimate_f0, f0_agreement, make_synthetic_dataset
from cyclic_nsf.errors import ConfigurationError, DivergenceError, InputValidationError
from cyclic_nsf.losses import LossConfig, LossReport
from cyclic_nsf.signal_core import StftConfig, Waveform
from cyclic_nsf.source_module import BETA_PRIOR, REFERENCE_BETAS
from cyclic_nsf.toy_nsf import ModelConfig, SourceType, ToyNsfModel
from cyclic_nsf.training import (
    MODEL_ROWS,
    BetaMode,
    EpochRecord,
    TrainConfig,
    TrainingLog,
    crop,
    evaluate,
    row_step,
    select_best_epoch,
    train,
    training_step,
)

FAST_LOSS = LossConfig(stft_configs=(StftConfig(128, 80, 40), StftConfig(512, 320, 80)))


@pytest.fixture
def base_config():
    return ModelConfig(channels=2, num_layers=3, smooth_window=16)


def quick_config(**overrides) -> TrainConfig:
    values = {"epochs": 2, "max_steps": 3, "batch_length": 1600, "channels": 2, "dtype": "float64"}
    values.update(overrides)
    return TrainConfig(**values)


@pytest.mark.unit
class TestTrainConfig:

    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 3e-4
        assert cfg.adam_betas == (0.9, 0.999)
        assert cfg.adam_eps == 1e-8
        assert cfg.source_type is SourceType.CNO

    def test_rows(self):
        assert list(MODEL_ROWS) == ["Sin", "Pul", "Rno", "Cno_b1", "Cno_b2", "Cno_b3", "Cno_btr",
                                    "Rno_noMask", "Cno_noMask"]
        assert TrainConfig.for_row("Cno_b3").beta == REFERENCE_BETAS[2]
        assert TrainConfig.for_row("Cno_btr").beta_mode is BetaMode.TRAINABLE
        assert not TrainConfig.for_row("Sin").mask_loss
        assert not TrainConfig.for_row("Pul").mask_loss
        assert TrainConfig.for_row("Rno").mask_loss

    def test_row_from_dict_with_overrides(self):
        cfg = TrainConfig.from_dict({"row": "Cno_b1", "epochs": 3})
        assert (cfg.row, cfg.epochs, cfg.beta) == ("Cno_b1", 3, REFERENCE_BETAS[0])

    @pytest.mark.parametrize("values", [
        {"learning_rate": -1e-3},
        {"epochs": 0},
        {"max_steps": 0},
        {"adam_betas": (0.9, 1.0)},
        {"beta": 0.0},
        {"row": "Lf"},
        {"dtype": "int8"},
    ])
    def test_invalid(self, values):
        with pytest.raises(ConfigurationError):
            TrainConfig(**values)

    def test_zero_learning_rate_allowed(self):
        assert TrainConfig(learning_rate=0.0).learning_rate == 0.0

    def test_model_config(self, base_config):
        model_cfg = TrainConfig.for_row("Cno_btr", seed=4, channels=3).model_config(base_config)
        assert model_cfg.trainable_beta and model_cfg.beta == BETA_PRIOR
        assert (model_cfg.channels, model_cfg.init_seed, model_cfg.num_layers) == (3, 4, 3)


@pytest.mark.unit
class TestBestEpoch:

    def test_minimum_validation_loss(self):
        log = TrainingLog([EpochRecord(1, 5.0, 4.0, 10, 0.87), EpochRecord(2, 4.0, 3.5, 20, 0.87),
                           EpochRecord(3, 3.0, 3.7, 30, 0.87)])
        assert select_best_epoch(log) == 2

    def test_ties_pick_earliest(self):
        records = [EpochRecord(1, 1.0, 2.0, 1, 0.87), EpochRecord(2, 1.0, 2.0, 2, 0.87)]
        assert select_best_epoch(records) == 1

    def test_non_finite_skipped(self):
        records = [EpochRecord(1, 1.0, math.nan, 1, 0.87), EpochRecord(2, 1.0, 9.0, 2, 0.87)]
        assert select_best_epoch(records) == 2

    def test_empty(self):
        with pytest.raises(InputValidationError):
            select_best_epoch(TrainingLog())


@pytest.mark.unit
class TestTrainingLoop:

    def test_crop_is_frame_aligned(self, small_dataset, rng):
        utt = small_dataset.train[0]
        f0, features, target = crop(utt, 1600, 80, rng(0))
        assert f0.shape == (20,) and features.shape[0] == 20 and target.shape == (1600,)

    def test_zero_learning_rate_leaves_parameters(self, small_dataset, base_config):
        cfg = quick_config(learning_rate=0.0)
        model = ToyNsfModel(cfg.model_config(base_config))
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        result = train(model, small_dataset, cfg, FAST_LOSS)
        assert result.log.steps == 3
        for name, param in result.model.named_parameters():
            assert torch.equal(param, before[name]), name

    def test_log_and_best_epoch(self, small_dataset, base_config):
        cfg = quick_config(max_steps=None, epochs=2)
        result = train(ToyNsfModel(cfg.model_config(base_config)), small_dataset, cfg, FAST_LOSS)
        assert [r.epoch for r in result.log.epochs] == [1, 2]
        assert result.log.steps == 2 * len(small_dataset.train)
        assert result.log.best_epoch == select_best_epoch(result.log)
        columns = result.log.to_columns()
        assert set(columns) == {"epoch", "train_loss", "validation_loss", "steps", "beta"}

    def test_deterministic(self, small_dataset, base_config):
        cfg = quick_config()
        a = train(ToyNsfModel(cfg.model_config(base_config)), small_dataset, cfg, FAST_LOSS).model
        b = train(ToyNsfModel(cfg.model_config(base_config)), small_dataset, cfg, FAST_LOSS).model
        for (name, p), q in zip(a.named_parameters(), b.parameters()):
            assert torch.equal(p, q), name

    def test_best_state_is_restored(self, small_dataset, base_config):
        cfg = quick_config(epochs=3, max_steps=None)
        result = train(ToyNsfModel(cfg.model_config(base_config)), small_dataset, cfg, FAST_LOSS)
        validation = evaluate(result.model, small_dataset.validation, cfg, FAST_LOSS)
        best = next(r for r in result.log.epochs if r.epoch == result.log.best_epoch)
        assert validation == pytest.approx(best.validation_loss, rel=1e-9)

    def test_divergence(self, small_dataset, base_config, rng, mocker):
        cfg = quick_config()
        model = ToyNsfModel(cfg.model_config(base_config))
        nan = torch.tensor(math.nan, dtype=torch.float64, requires_grad=True)
        mocker.patch("cyclic_nsf.training.compute_loss",
                     return_value=LossReport(total=nan, plain=math.nan, per_config=[math.nan]))
        optimizer = torch.optim.Adam(model.parameters())
        with pytest.raises(DivergenceError, match="non-finite"):
            training_step(model, optimizer, small_dataset.train[0], cfg, FAST_LOSS, rng())

    def test_empty_splits(self, small_dataset, base_config):
        cfg = quick_config()
        model = ToyNsfModel(cfg.model_config(base_config))
        with pytest.raises(InputValidationError, match="validation"):
            train(model, SyntheticDataset(small_dataset.train, []), cfg, FAST_LOSS)
        with pytest.raises(InputValidationError, match="training"):
            train(model, SyntheticDataset([], small_dataset.validation), cfg, FAST_LOSS)


@pytest.mark.integration
class TestModelRows:

    @pytest.mark.parametrize("row", list(MODEL_ROWS))
    def test_one_step_per_row(self, small_dataset, base_config, row):
        report = row_step(row, small_dataset, base_config, FAST_LOSS, batch_length=1600, channels=2)
        assert math.isfinite(report.value)
        if MODEL_ROWS[row]["mask_loss"]:
            assert len(report.per_block_masked) == 5
        else:
            assert report.per_block_masked == []
            assert report.value == pytest.approx(report.plain)

    def test_mask_switch_leaves_the_forward_pass_alone(self, small_dataset, base_config):
        masked = TrainConfig.for_row("Cno_b2", channels=2).model_config(base_config)
        unmasked = TrainConfig.for_row("Cno_noMask", channels=2).model_config(base_config)
        assert masked == unmasked
        utt = small_dataset.train[0]
        with torch.no_grad():
            a = ToyNsfModel(masked)(utt.f0, utt.features, torch.Generator().manual_seed(2))
            b = ToyNsfModel(unmasked)(utt.f0, utt.features, torch.Generator().manual_seed(2))
        assert torch.equal(a.waveform, b.waveform)
        for block_a, block_b in zip(a.block_outputs, b.block_outputs):
            assert torch.equal(block_a, block_b)

    def test_trainable_beta_row_is_pulled_to_prior(self, small_dataset, base_config):
        report = row_step("Cno_btr", small_dataset, base_config, FAST_LOSS, batch_length=1600,
                          channels=2, beta=1.870)
        assert report.beta_penalty == pytest.approx(0.01)


@pytest.mark.slow
class TestCopySynthesis:

    def test_training_reduces_loss_and_keeps_pitch(self):
        dataset = make_synthetic_dataset(32, (0.5, 1.0), rng=0, validation_utts=8)
        cfg = TrainConfig.for_row("Cno_b2", max_steps=500, epochs=100, batch_length=8000)
        model = ToyNsfModel(cfg.model_config(ModelConfig()))
        result = train(model, dataset, cfg)
        losses = [r.train_loss for r in result.log.epochs]
        assert losses[-1] <= 0.7 * losses[0]

        matched = voiced = 0
        with torch.no_grad():
            for utt in dataset.validation:
                generator = torch.Generator().manual_seed(0)
                out = result.model(utt.f0, utt.features, generator).waveform.to(torch.float64)
                agreement = f0_agreement(estimate_f0(Waveform(out, 16000)), utt.f0, 0.05, boundary_margin=3)
                matched += agreement.matched_frames
                voiced += agreement.voiced_frames
        assert matched / voiced >= 0.9
