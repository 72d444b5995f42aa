#!/usr/bin/env python3
"""
Build every named model row (source type, beta mode, mask loss) and run one
training step on a small synthetic corpus. Prints one line per row and exits
non-zero if any row fails.
"""
import argparse
import sys
import time
from pathlib import Path

# Add project root and src directory to path for imports
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))
sys.path.insert(0, str(project_root))

from cyclic_nsf.config_loader import load_config
from cyclic_nsf.dataset import make_synthetic_dataset
from cyclic_nsf.errors import exit_code_for, interpret
from cyclic_nsf.logging_config import get_logger, setup_logging
from cyclic_nsf.settings import Settings
from cyclic_nsf.training import MODEL_ROWS, row_step

logger = get_logger(__name__)


def run_rows(settings: Settings, rows, utterances: int, batch_length: int) -> int:
    dataset = make_synthetic_dataset(utterances, (0.3, 0.4), settings.dataset.seed,
                                     validation_utts=1, config=settings.dataset)
    failures = 0
    for row in rows:
        start = time.time()
        try:
            report = row_step(row, dataset, settings.model, settings.loss,
                              batch_length=batch_length, channels=settings.train.channels,
                              seed=settings.train.seed)
        except Exception as e:
            error = interpret(e)
            failures += 1
            logger.error(f"{row}: {type(error).__name__}: {error}")
            print(f"❌ {row:14} {type(error).__name__}: {error}")
            continue
        elapsed = time.time() - start
        masked = sum(report.per_block_masked)
        print(f"✅ {row:14} total={report.value:.5f} plain={report.plain:.5f} "
              f"masked={masked:.5f} beta_penalty={report.beta_penalty:.5f} ({elapsed:.1f}s)")
    return failures


def main():
    parser = argparse.ArgumentParser(description="One training step for every model row")
    parser.add_argument("--config", type=str, help="Path to config.yaml (defaults are used when omitted)")
    parser.add_argument("--rows", nargs="+", choices=list(MODEL_ROWS), default=list(MODEL_ROWS),
                        help="Rows to run (default: all)")
    parser.add_argument("--utterances", type=int, default=2, help="Synthetic training utterances")
    parser.add_argument("--batch-length", type=int, default=4000, help="Samples per training excerpt")
    args = parser.parse_args()

    setup_logging(console=False)
    try:
        settings = Settings.from_config(load_config(Path(args.config))) if args.config else Settings()
    except Exception as e:
        error = interpret(e)
        print(f"❌ {error}")
        sys.exit(exit_code_for(error))

    failures = run_rows(settings, args.rows, args.utterances, args.batch_length)
    print(f"\n{len(args.rows) - failures}/{len(args.rows)} rows completed")
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
