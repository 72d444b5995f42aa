"""
File formats: 16-bit PCM mono WAV, F0 text tracks and CSV artefacts.

Every writer goes through `atomic_write_bytes`, so a failed run never leaves a
half-written file behind.
"""
import math
import os
import re
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Sequence, Union

import numpy as np
import pyarrow as pa
from pyarrow import csv as pa_csv
import torch

from .errors import ArtifactFormatError, AudioFormatError, F0ParseError, InputValidationError
from .logging_config import get_logger
from .signal_core import DEFAULT_FRAME_SHIFT, FrameSequence, Waveform

logger = get_logger(__name__)

PathLike = Union[str, Path]

WAVE_FORMAT_PCM = 1
PCM16_SCALE = 32768.0
PCM16_MAX = 1.0 - 2.0 ** -15
F0_HEADER = "frame_shift_ms"
_HEADER_PATTERN = re.compile(r"^\s*frame_shift_ms\s*=\s*(\S+)\s*$")
FEATURE_COLUMN_PREFIX = "band_"
TIME_COLUMN = "time_s"


@dataclass(frozen=True)
class F0Track:
    """Frame-level F0 in Hz; 0 marks an unvoiced frame."""
    values: torch.Tensor
    frame_shift: float = DEFAULT_FRAME_SHIFT

    def __post_init__(self):
        values = self.values
        if not isinstance(values, torch.Tensor):
            values = torch.as_tensor(np.asarray(values, dtype=np.float64))
        values = values.to(torch.float64)
        object.__setattr__(self, "values", values)
        if values.dim() != 1:
            raise InputValidationError(f"F0 track must be 1-D, got shape {tuple(values.shape)}")
        if not bool(torch.isfinite(values).all()) or bool((values < 0).any()):
            raise InputValidationError("F0 values must be finite and non-negative")
        if self.frame_shift <= 0:
            raise InputValidationError(f"frame_shift must be positive, got {self.frame_shift}")

    def __len__(self):
        return self.values.shape[0]

    @property
    def voiced(self) -> torch.Tensor:
        return self.values > 0

    def to_frames(self) -> FrameSequence:
        return FrameSequence(self.values, self.frame_shift)


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


# --- WAV -------------------------------------------------------------------

def _check_fmt(data: bytes, body: int, size: int) -> int:
    if size < 16:
        raise AudioFormatError(f"'fmt ' chunk is {size} bytes, expected at least 16", body - 4)
    tag, channels, rate, byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", data, body)
    if tag != WAVE_FORMAT_PCM:
        raise AudioFormatError(f"'fmt ' chunk: format tag {tag} is not PCM", body)
    if channels != 1:
        raise AudioFormatError(f"'fmt ' chunk: {channels} channels, only mono is supported", body + 2)
    if rate == 0:
        raise AudioFormatError("'fmt ' chunk: sample rate is 0", body + 4)
    if bits != 16:
        raise AudioFormatError(f"'fmt ' chunk: {bits} bits per sample, only 16 is supported", body + 14)
    if block_align != 2:
        raise AudioFormatError(f"'fmt ' chunk: block align {block_align}, expected 2", body + 12)
    if byte_rate != rate * 2:
        raise AudioFormatError(f"'fmt ' chunk: byte rate {byte_rate} inconsistent with {rate} Hz", body + 8)
    return rate


def parse_wav(data: bytes) -> Waveform:
    """Parse the bytes of a RIFF/WAVE PCM16 mono file."""
    if len(data) < 12:
        raise AudioFormatError(f"truncated RIFF header ({len(data)} bytes)", 0)
    riff, riff_size, form = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF":
        raise AudioFormatError(f"missing 'RIFF' tag, found {riff!r}", 0)
    if form != b"WAVE":
        raise AudioFormatError(f"RIFF form type is {form!r}, expected 'WAVE'", 8)
    if riff_size + 8 > len(data):
        raise AudioFormatError(
            f"'RIFF' chunk length {riff_size} exceeds the {len(data) - 8} bytes present", 4)

    sample_rate = None
    samples = None
    offset = 12
    while offset < len(data):
        if offset + 8 > len(data):
            raise AudioFormatError("truncated chunk header", offset)
        chunk_id, size = struct.unpack_from("<4sI", data, offset)
        name = chunk_id.decode("latin-1")
        body = offset + 8
        if body + size > len(data):
            raise AudioFormatError(
                f"'{name}' chunk length {size} exceeds the {len(data) - body} bytes remaining", offset + 4)
        if chunk_id == b"fmt ":
            sample_rate = _check_fmt(data, body, size)
        elif chunk_id == b"data":
            if sample_rate is None:
                raise AudioFormatError("'data' chunk precedes the 'fmt ' chunk", offset)
            if size % 2:
                raise AudioFormatError(
                    f"'data' chunk length {size} is not a whole number of 16-bit samples", offset + 4)
            pcm = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
            samples = pcm.astype(np.float64) / PCM16_SCALE
        offset = body + size + (size & 1)

    if sample_rate is None:
        raise AudioFormatError("missing 'fmt ' chunk", 12)
    if samples is None:
        raise AudioFormatError("missing 'data' chunk", len(data))
    return Waveform.from_numpy(samples, sample_rate)


def read_wav(path: PathLike) -> Waveform:
    path = Path(path)
    waveform = parse_wav(path.read_bytes())
    logger.debug(f"Read {path}: {len(waveform)} samples at {waveform.sample_rate} Hz")
    return waveform


def encode_wav(waveform: Waveform) -> bytes:
    """PCM16 mono bytes; samples are clipped to [-1, 1 - 2^-15]."""
    x = np.clip(waveform.numpy(), -1.0, PCM16_MAX)
    pcm = np.round(x * PCM16_SCALE).astype("<i2")
    payload = pcm.tobytes()
    rate = waveform.sample_rate
    header = struct.pack("<4sI4s4sIHHIIHH4sI",
                         b"RIFF", 36 + len(payload), b"WAVE",
                         b"fmt ", 16, WAVE_FORMAT_PCM, 1, rate, rate * 2, 2, 16,
                         b"data", len(payload))
    return header + payload


def write_wav(path: PathLike, waveform: Waveform) -> Path:
    path = atomic_write_bytes(path, encode_wav(waveform))
    logger.info(f"Wrote {path} ({waveform.duration:.3f} s at {waveform.sample_rate} Hz)")
    return path


# --- F0 text ---------------------------------------------------------------

def format_decimal(value: float) -> str:
    """Six decimal places, trailing zeros dropped ('5', '0', '123.45')."""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("", "-0") else text


def parse_f0(text: str) -> F0Track:
    lines = text.splitlines()
    if not lines:
        raise F0ParseError(f"missing header '{F0_HEADER}=<v>'", line=1)
    match = _HEADER_PATTERN.match(lines[0])
    if match is None:
        raise F0ParseError(f"expected header '{F0_HEADER}=<v>', found '{lines[0].strip()}'", line=1)
    try:
        shift_ms = float(match.group(1))
    except ValueError:
        raise F0ParseError(f"frame shift '{match.group(1)}' is not a number", line=1)
    if not math.isfinite(shift_ms) or shift_ms <= 0:
        raise F0ParseError(f"frame shift must be positive, got {match.group(1)}", line=1)

    values = []
    for number, raw in enumerate(lines[1:], start=2):
        token = raw.strip()
        if not token or token.startswith("#"):
            continue
        try:
            value = float(token)
        except ValueError:
            raise F0ParseError(f"'{token}' is not a number", line=number)
        if not math.isfinite(value):
            raise F0ParseError(f"non-finite F0 value '{token}'", line=number)
        if value < 0:
            raise F0ParseError(f"negative F0 value {token}", line=number)
        values.append(value)
    if not values:
        raise F0ParseError("no frames")
    return F0Track(torch.tensor(values, dtype=torch.float64), shift_ms / 1000.0)


def read_f0(path: PathLike) -> F0Track:
    return parse_f0(Path(path).read_text(encoding="utf-8"))


def format_f0(track: F0Track) -> str:
    lines = [f"{F0_HEADER}={format_decimal(track.frame_shift * 1000.0)}"]
    lines.extend(format_decimal(float(v)) for v in track.values)
    return "\n".join(lines) + "\n"


def write_f0(path: PathLike, track: F0Track) -> Path:
    path = atomic_write_bytes(path, format_f0(track).encode("utf-8"))
    logger.info(f"Wrote {path} ({len(track)} frames)")
    return path


# --- CSV -------------------------------------------------------------------

def write_csv(path: PathLike, columns: Mapping[str, Sequence[float]]) -> Path:
    """Write equal-length named columns as a CSV file with a header row."""
    lengths = {name: len(values) for name, values in columns.items()}
    if len(set(lengths.values())) > 1:
        raise InputValidationError(f"CSV columns differ in length: {lengths}")
    table = pa.table({name: pa.array(np.asarray(values)) for name, values in columns.items()})
    sink = pa.BufferOutputStream()
    pa_csv.write_csv(table, sink)
    path = atomic_write_bytes(path, sink.getvalue().to_pybytes())
    logger.info(f"Wrote {path} ({table.num_rows} rows, columns {table.column_names})")
    return path


def read_csv(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV file not found: {path}")
    try:
        table = pa_csv.read_csv(path)
    except pa.ArrowInvalid as e:
        raise ArtifactFormatError(f"malformed CSV file {path}: {e}") from e
    return {name: table.column(name).to_numpy() for name in table.column_names}


def write_features_csv(path: PathLike, features: FrameSequence) -> Path:
    frames = features.frames.detach().cpu().numpy()
    columns = {TIME_COLUMN: features.start_time + np.arange(frames.shape[0]) * features.frame_shift}
    for d in range(frames.shape[1]):
        columns[f"{FEATURE_COLUMN_PREFIX}{d:02d}"] = frames[:, d]
    return write_csv(path, columns)


def read_features_csv(path: PathLike, frame_shift: float = DEFAULT_FRAME_SHIFT) -> FrameSequence:
    """
    Read a feature CSV written by `write_features_csv`. The frame shift is
    taken from the time column when it has at least two rows.
    """
    columns = read_csv(path)
    bands = sorted(name for name in columns if name.startswith(FEATURE_COLUMN_PREFIX))
    if not bands:
        raise ArtifactFormatError(f"{path} has no '{FEATURE_COLUMN_PREFIX}NN' columns")
    try:
        frames = np.stack([columns[name].astype(np.float64) for name in bands], axis=1)
    except (TypeError, ValueError) as e:
        raise ArtifactFormatError(f"{path} has non-numeric feature values: {e}") from e
    if not np.isfinite(frames).all():
        raise ArtifactFormatError(f"{path} contains missing or non-finite feature values")
    start = 0.0
    times = columns.get(TIME_COLUMN)
    if times is not None and len(times) > 0:
        start = float(times[0])
        if len(times) > 1:
            frame_shift = float(round(times[1] - times[0], 9))
    return FrameSequence(torch.from_numpy(frames), frame_shift, start)
