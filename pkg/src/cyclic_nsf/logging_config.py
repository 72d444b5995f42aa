"""
Run logging for the command-line tools: one timestamped file per run plus an
optional console stream.
"""
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional, TextIO

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LOG_PREFIX = "cyclic_nsf"


class FlushingFileHandler(logging.FileHandler):
    """File handler that syncs every record, so a training log can be followed live."""

    def emit(self, record):
        super().emit(record)
        if self.stream is None:
            return
        self.flush()
        try:
            os.fsync(self.stream.fileno())
        except (OSError, AttributeError, ValueError):
            pass


def setup_logging(log_dir: Optional[Path] = None, log_level: int = logging.INFO,
                  console: bool = True, stream: Optional[TextIO] = None) -> logging.Logger:
    """
    Route the root logger to `<log_dir>/cyclic_nsf_<timestamp>.log` and, when
    `console` is set, to `stream` (stdout by default). Earlier handlers are
    closed, so repeated calls within one process never duplicate records.
    """
    log_dir = Path(log_dir) if log_dir is not None else Path.cwd() / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / f"{LOG_PREFIX}_{datetime.now():%Y%m%d_%H%M%S}.log"

    root = logging.getLogger()
    root.setLevel(log_level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    handlers = [FlushingFileHandler(log_file, mode="a")]
    if console:
        handlers.append(logging.StreamHandler(stream if stream is not None else sys.stdout))
    formatter = logging.Formatter(LOG_FORMAT, DATE_FORMAT)
    for handler in handlers:
        handler.setLevel(log_level)
        handler.setFormatter(formatter)
        root.addHandler(handler)
    return root


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
