"""
Command-line front end: `cyclic-nsf <command> ...`.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or file-format
error, 3 numeric failure.
"""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import torch
import yaml

from .audio_io import (
    F0Track,
    read_f0,
    read_features_csv,
    read_wav,
    write_csv,
    write_f0,
    write_features_csv,
    write_wav,
)
from .checkpoint import load_model, save_checkpoint
from .config_loader import load_config
from .dataset import dataset_from_config, estimate_f0, f0_agreement
from .errors import EXIT_OK, InputValidationError, UsageError, exit_code_for, interpret
from .logging_config import get_logger, setup_logging
from .losses import build_sine_mask, masked_spectral_loss, spectral_amplitude_losses
from .settings import Settings
from .signal_core import DEFAULT_FRAME_SHIFT, Waveform, upsample_and_smooth
from .source_module import (
    REFERENCE_BETAS,
    CyclicNoiseConfig,
    MixLayer,
    SourceConfig,
    decay_envelope,
    gen_cyclic_noise,
    gen_gaussian_noise,
    gen_pulse_train,
    gen_sine_source,
    mix_tanh,
)
from .toy_nsf import SourceType, build_model
from .training import train

logger = get_logger(__name__)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so main() owns exit codes."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def upsampled_f0(track: F0Track, sample_rate: int) -> torch.Tensor:
    return upsample_and_smooth(track.to_frames(), sample_rate, smooth_passes=0)[:, 0]


def normalise_peak(samples: torch.Tensor) -> torch.Tensor:
    """Scale so the maximum absolute value is exactly 1 (zero signals pass through)."""
    peak = samples.abs().max()
    return samples if float(peak) == 0.0 else samples / peak


def make_source(source_type: SourceType, f0: torch.Tensor, cfg: SourceConfig, beta: float,
                rng: torch.Generator) -> torch.Tensor:
    """Stand-alone source with unit mix weights and zero bias."""
    if source_type is SourceType.SIN:
        return gen_sine_source(f0, cfg, MixLayer.fixed([1.0] * cfg.harmonics), rng)
    unit = MixLayer.fixed([1.0])
    if source_type is SourceType.PUL:
        return mix_tanh(gen_pulse_train(f0, cfg, rng)[None, :], unit)
    if source_type is SourceType.RNO:
        return mix_tanh(gen_gaussian_noise(f0.shape[0], cfg.unvoiced_std, rng)[None, :], unit)
    return gen_cyclic_noise(f0, CyclicNoiseConfig(beta), cfg, unit, rng)


def _generator(seed: int) -> torch.Generator:
    rng = torch.Generator()
    rng.manual_seed(seed)
    return rng


def comparison_series(f0: torch.Tensor, cfg: SourceConfig, seed: int) -> Dict[str, torch.Tensor]:
    """Sine mix, pulse train and cyclic noise at the smallest and largest reference beta."""
    low, high = REFERENCE_BETAS[0], REFERENCE_BETAS[2]
    return {
        "sine": make_source(SourceType.SIN, f0, cfg, low, _generator(seed)),
        "pulse": gen_pulse_train(f0, cfg, _generator(seed)),
        "cyclic_noise_b0435": make_source(SourceType.CNO, f0, cfg, low, _generator(seed)),
        "cyclic_noise_b1739": make_source(SourceType.CNO, f0, cfg, high, _generator(seed)),
    }


def plot_columns(series: Dict[str, torch.Tensor], sample_rate: int) -> Dict[str, np.ndarray]:
    length = next(iter(series.values())).shape[0]
    columns = {"time_s": (torch.arange(length, dtype=torch.float64) / sample_rate).numpy()}
    for name, values in series.items():
        columns[name] = normalise_peak(values.detach().to(torch.float64)).numpy()
    return columns


def _print(values: Dict) -> None:
    sys.stdout.write(yaml.safe_dump(values, sort_keys=False))
    sys.stdout.flush()


@torch.no_grad()
def cmd_gen_source(args, settings: Settings) -> None:
    cfg = settings.source
    source_type = SourceType(args.type)
    seed = args.seed if args.seed is not None else (cfg.seed or 0)
    beta = args.beta if args.beta is not None else settings.train.beta
    if args.beta is not None and source_type is not SourceType.CNO:
        logger.warning(f"--beta only affects the cyclic-noise source, ignored for '{source_type.value}'")

    track = read_f0(args.f0)
    f0 = upsampled_f0(track, cfg.sample_rate)
    source = make_source(source_type, f0, cfg, beta, _generator(seed)).detach().to(torch.float64)
    write_wav(args.output, Waveform(source, cfg.sample_rate))

    if args.plot_data:
        columns = plot_columns({"source": source, **comparison_series(f0, cfg, seed)}, cfg.sample_rate)
        write_csv(args.plot_data, columns)

    if args.analysis:
        if source_type is not SourceType.CNO:
            raise UsageError("--analysis is only defined for --type cno")
        voiced = track.values[track.values > 0]
        if voiced.numel() == 0:
            raise InputValidationError("decay analysis needs at least one voiced frame")
        f0_hz = float(voiced.median())
        envelope = decay_envelope(f0_hz, beta, cfg, _generator(seed), draws=args.draws)
        period = int(round(cfg.sample_rate / f0_hz))
        rows = min(period + 1, envelope.shape[0] - period)
        lags = torch.arange(rows)
        theoretical = torch.exp(-lags.to(torch.float64) * f0_hz / (beta * cfg.sample_rate))
        ratio = envelope[period:period + rows] / envelope[:rows]
        write_csv(args.analysis, {
            "lag": lags.numpy(),
            "envelope": envelope[:rows].numpy(),
            "theoretical": theoretical.numpy(),
            "period_ratio": ratio.numpy(),
        })
        logger.info(f"Per-period decay at {f0_hz:.1f} Hz: measured {float(envelope[period]):.4f}, "
                    f"expected {math.exp(-1.0 / beta):.4f}")


@torch.no_grad()
def cmd_plot_sources(args, settings: Settings) -> None:
    cfg = settings.source
    if args.f0:
        track = read_f0(args.f0)
    else:
        frames = max(1, int(round(args.duration / DEFAULT_FRAME_SHIFT)))
        track = F0Track(torch.full((frames,), float(args.f0_hz), dtype=torch.float64), DEFAULT_FRAME_SHIFT)
    f0 = upsampled_f0(track, cfg.sample_rate)
    write_csv(args.output, plot_columns(comparison_series(f0, cfg, args.seed), cfg.sample_rate))


def _aligned(reference: Waveform, generated: Waveform, trim: bool):
    if reference.sample_rate != generated.sample_rate:
        raise UsageError(f"sample rates differ: {reference.sample_rate} vs {generated.sample_rate} Hz")
    ref, gen = reference.samples, generated.samples
    if ref.shape[0] != gen.shape[0]:
        if not trim:
            raise UsageError(f"lengths differ ({ref.shape[0]} vs {gen.shape[0]} samples); use --trim")
        length = min(ref.shape[0], gen.shape[0])
        ref, gen = ref[:length], gen[:length]
    return ref, gen


def cmd_loss(args, settings: Settings) -> None:
    reference, generated = read_wav(args.ref), read_wav(args.gen)
    ref, gen = _aligned(reference, generated, args.trim)
    cfgs, eta = settings.loss.stft_configs, settings.loss.eta
    per_config = [float(x) for x in spectral_amplitude_losses(gen, ref, cfgs, eta)]
    report = {
        "plain": sum(per_config) / len(per_config),
        "plain_per_config": {f"{c.fft_size}/{c.frame_length}/{c.frame_shift}": v
                             for c, v in zip(cfgs, per_config)},
    }
    if args.mask_f0:
        source = SourceConfig(**{**settings.source.to_dict(), "harmonics": settings.loss.mask_harmonics,
                                 "sample_rate": reference.sample_rate})
        f0 = upsampled_f0(read_f0(args.mask_f0), reference.sample_rate)
        f0 = torch.nn.functional.pad(f0, (0, max(0, ref.shape[0] - f0.shape[0])))[:ref.shape[0]]
        mask = build_sine_mask(f0, source, _generator(args.seed))
        report["masked"] = float(masked_spectral_loss(gen, ref, mask, cfgs, eta))
    _print(report)


def cmd_train_toy(args, settings: Settings) -> None:
    train_cfg = settings.train
    if args.max_steps is not None or args.epochs is not None:
        overrides = train_cfg.to_dict()
        if args.max_steps is not None:
            overrides["max_steps"] = args.max_steps
        if args.epochs is not None:
            overrides["epochs"] = args.epochs
        train_cfg = type(train_cfg).from_dict(overrides)
        settings = Settings(settings.source, settings.loss, settings.model, train_cfg,
                            settings.dataset, settings.logging)

    dataset = dataset_from_config(settings.dataset)
    model = build_model(settings.training_model_config())
    result = train(model, dataset, train_cfg, settings.loss)
    save_checkpoint(args.out, result.model, train_cfg.to_dict(), train_cfg.seed, result.log.best_epoch)
    losses_path = args.losses or Path(args.out).with_suffix(".losses.csv")
    write_csv(losses_path, result.log.to_columns())
    _print({"best_epoch": result.log.best_epoch, "steps": result.log.steps,
            "checkpoint": str(args.out), "losses": str(losses_path)})


def cmd_resynth(args, settings: Settings) -> None:
    model, checkpoint = load_model(args.ckpt)
    track = read_f0(args.f0)
    features = read_features_csv(args.features, track.frame_shift)
    if features.num_frames != len(track):
        raise InputValidationError(
            f"F0 has {len(track)} frames but the feature file has {features.num_frames}")
    seed = args.seed if args.seed is not None else (checkpoint.seed or 0)
    with torch.no_grad():
        output = model(track, features, _generator(seed))
    waveform = Waveform(output.waveform.detach().to(torch.float64), model.config.source.sample_rate)
    write_wav(args.output, waveform)
    estimated = estimate_f0(waveform, track.frame_shift)
    agreement = f0_agreement(estimated, track, args.tolerance)
    _print({"output": str(args.output), "f0_agreement": agreement.to_dict()})


def cmd_make_dataset(args, settings: Settings) -> None:
    dataset = dataset_from_config(settings.dataset)
    out_dir = Path(args.out_dir)
    for split, utterances in (("train", dataset.train), ("validation", dataset.validation)):
        for utt in utterances:
            base = out_dir / split / utt.name
            write_wav(base.with_suffix(".wav"), utt.waveform)
            write_f0(base.with_suffix(".f0"), utt.f0)
            write_features_csv(base.with_suffix(".features.csv"), utt.features)
    _print({"train": len(dataset.train), "validation": len(dataset.validation), "out_dir": str(out_dir)})


def build_parser() -> CliParser:
    parser = CliParser(prog="cyclic-nsf", description="Cyclic-noise NSF vocoder tools")
    parser.add_argument("--config", help="YAML configuration file (defaults are used when omitted)")
    parser.add_argument("--log-dir", help="Directory for the run log (default: logging.directory or logs)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Log level (default: logging.level or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-source", help="Generate a source signal from an F0 file")
    p.add_argument("--f0", required=True, help="F0 text file")
    p.add_argument("--type", required=True, choices=[t.value for t in SourceType])
    p.add_argument("--beta", type=float, help="Cyclic-noise decay rate")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True, help="Output WAV file")
    p.add_argument("--plot-data", help="CSV of the peak-normalised source and the four comparison series")
    p.add_argument("--analysis", help="CSV of the cyclic-noise decay envelope (cno only)")
    p.add_argument("--draws", type=int, default=1000, help="Noise draws for --analysis")
    p.set_defaults(handler=cmd_gen_source)

    p = commands.add_parser("plot-sources", help="Emit the four source comparison series as CSV")
    p.add_argument("--f0", help="F0 text file (default: constant --f0-hz)")
    p.add_argument("--f0-hz", type=float, default=100.0)
    p.add_argument("--duration", type=float, default=0.1, help="Seconds, when --f0 is omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="Output CSV file")
    p.set_defaults(handler=cmd_plot_sources)

    p = commands.add_parser("loss", help="Spectral (and masked) loss between two WAV files")
    p.add_argument("--ref", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--mask-f0", help="F0 file for the sine mask")
    p.add_argument("--trim", action="store_true", help="Trim both signals to the shorter length")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_loss)

    p = commands.add_parser("train-toy", help="Train the toy model on the synthetic corpus")
    p.add_argument("--out", required=True, help="Checkpoint file")
    p.add_argument("--losses", help="Per-epoch loss CSV (default: <out>.losses.csv)")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(handler=cmd_train_toy)

    p = commands.add_parser("resynth", help="Copy-synthesis from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--f0", required=True)
    p.add_argument("--features", required=True, help="Feature CSV")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=0.05, help="Relative F0 tolerance")
    p.set_defaults(handler=cmd_resynth)

    p = commands.add_parser("make-dataset", help="Write the synthetic corpus to disk")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_make_dataset)
    return parser


def load_settings(path: Optional[str]) -> Settings:
    return Settings.from_config(load_config(Path(path))) if path else Settings()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return exit_code_for(e)

    settings, failure = None, None
    try:
        settings = load_settings(args.config)
    except Exception as e:
        failure = e
    log_settings = settings.logging if settings else {}
    level = args.log_level or str(log_settings.get("level", "INFO")).upper()
    setup_logging(Path(args.log_dir or log_settings.get("directory", "logs")),
                  getattr(logging, level, logging.INFO), stream=sys.stderr)

    try:
        if failure is not None:
            raise failure
        options = {k: v for k, v in vars(args).items() if k != "handler"}
        logger.info(f"Command: {yaml.safe_dump(options, sort_keys=False).strip()}")
        logger.info(f"Resolved configuration:\n{settings.dump()}")
        args.handler(args, settings)
    except Exception as e:
        error = interpret(e)
        logger.error(f"{type(error).__name__}: {error}")
        return exit_code_for(error)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
