"""
Model checkpoints as Arrow IPC files.

One row per named tensor (name, shape, dtype, values as float64 list). The
schema metadata carries the format tag, the format version, the model and
training configuration as JSON, the seed and the selected epoch.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import pyarrow as pa
import torch
from pyarrow.lib import ArrowException

from .audio_io import atomic_write_bytes
from .errors import CheckpointError, ConfigurationError, interpret
from .logging_config import get_logger
from .toy_nsf import ModelConfig, ToyNsfModel

logger = get_logger(__name__)

FORMAT_NAME = "cyclic-nsf-checkpoint"
FORMAT_VERSION = "1"

_DTYPE_NAMES = {torch.float32: "float32", torch.float64: "float64", torch.int64: "int64"}
_NAME_DTYPES = {name: dtype for dtype, name in _DTYPE_NAMES.items()}

TENSOR_SCHEMA = pa.schema([
    ("name", pa.string()),
    ("shape", pa.list_(pa.int64())),
    ("dtype", pa.string()),
    ("values", pa.list_(pa.float64())),
])


@dataclass
class Checkpoint:
    model_config: Dict[str, Any]
    train_config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    best_epoch: Optional[int] = None
    state: Dict[str, torch.Tensor] = field(default_factory=dict)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    names, shapes, dtypes, values = [], [], [], []
    for name, tensor in checkpoint.state.items():
        tensor = tensor.detach().cpu()
        if tensor.dtype not in _DTYPE_NAMES:
            raise CheckpointError(f"cannot store tensor '{name}' of dtype {tensor.dtype}")
        names.append(name)
        shapes.append(list(tensor.shape))
        dtypes.append(_DTYPE_NAMES[tensor.dtype])
        values.append(tensor.to(torch.float64).reshape(-1).tolist())
    metadata = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "model_config": json.dumps(checkpoint.model_config, sort_keys=True),
        "train_config": json.dumps(checkpoint.train_config, sort_keys=True),
        "seed": json.dumps(checkpoint.seed),
        "best_epoch": json.dumps(checkpoint.best_epoch),
    }
    table = pa.table([pa.array(names, pa.string()), pa.array(shapes, pa.list_(pa.int64())),
                      pa.array(dtypes, pa.string()), pa.array(values, pa.list_(pa.float64()))],
                     schema=TENSOR_SCHEMA.with_metadata(metadata))
    sink = pa.BufferOutputStream()
    with pa.ipc.new_file(sink, table.schema) as writer:
        writer.write_table(table)
    return sink.getvalue().to_pybytes()


def decode_checkpoint(data: bytes) -> Checkpoint:
    try:
        table = pa.ipc.open_file(pa.py_buffer(data)).read_all()
    except ArrowException as e:
        raise interpret(e) from e

    metadata = {k.decode(): v.decode() for k, v in (table.schema.metadata or {}).items()}
    if metadata.get("format") != FORMAT_NAME:
        raise CheckpointError(f"not a {FORMAT_NAME} file (format tag {metadata.get('format')!r})")
    if metadata.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: file has version {metadata.get('version')}, "
            f"this build reads version {FORMAT_VERSION}")
    missing = [c for c in TENSOR_SCHEMA.names if c not in table.column_names]
    if missing:
        raise CheckpointError(f"checkpoint is missing columns {missing}")

    try:
        checkpoint = Checkpoint(
            model_config=json.loads(metadata["model_config"]),
            train_config=json.loads(metadata.get("train_config", "{}")),
            seed=json.loads(metadata.get("seed", "null")),
            best_epoch=json.loads(metadata.get("best_epoch", "null")),
        )
    except (KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint metadata is unreadable: {e}") from e

    rows = table.to_pydict()
    for name, shape, dtype, values in zip(rows["name"], rows["shape"], rows["dtype"], rows["values"]):
        if dtype not in _NAME_DTYPES:
            raise CheckpointError(f"tensor '{name}' has unknown dtype '{dtype}'")
        if values is None or shape is None or math.prod(shape) != len(values):
            raise CheckpointError(f"tensor '{name}' has {len(values or [])} values for shape {shape}")
        tensor = torch.tensor(values, dtype=torch.float64).reshape(shape)
        checkpoint.state[name] = tensor.to(_NAME_DTYPES[dtype])
    return checkpoint


def save_checkpoint(path: Union[str, Path], model: ToyNsfModel,
                    train_config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None,
                    best_epoch: Optional[int] = None) -> Path:
    checkpoint = Checkpoint(model_config=model.config.to_dict(), train_config=train_config or {},
                            seed=seed, best_epoch=best_epoch, state=dict(model.state_dict()))
    path = atomic_write_bytes(path, encode_checkpoint(checkpoint))
    logger.info(f"Saved checkpoint {path} ({len(checkpoint.state)} tensors, best epoch {best_epoch})")
    return path


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    checkpoint = decode_checkpoint(path.read_bytes())
    logger.info(f"Read checkpoint {path} ({len(checkpoint.state)} tensors)")
    return checkpoint


def load_model(path: Union[str, Path]) -> Tuple[ToyNsfModel, Checkpoint]:
    """Rebuild the model recorded in a checkpoint and load its tensors."""
    checkpoint = read_checkpoint(path)
    try:
        config = ModelConfig.from_dict(checkpoint.model_config)
    except (ConfigurationError, TypeError) as e:
        raise CheckpointError(f"checkpoint model config is invalid: {e}") from e
    model = ToyNsfModel(config)
    try:
        model.load_state_dict(checkpoint.state)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint tensors do not match the model: {e}") from e
    model.eval()
    return model, checkpoint
