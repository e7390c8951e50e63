"""
avae/checkpoint.py

Single-file checkpoint container.

Layout (little-endian):
    b"AVAE" | u32 version | u32 metadata length | metadata JSON (UTF-8)
    | u32 tensor count | per tensor: u16 name length, name (UTF-8), u32 rank, u32 dims..., f32 values
"""

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from avae.errors import FormatError, StorageError, UsageError
from avae.logger import logger

MAGIC = b"AVAE"
VERSION = 1
VALUE_DTYPE = np.dtype("<f4")


class AttributeRecord(BaseModel):
    positives: int = Field(ge=1)
    negatives: int = Field(ge=1)


class CheckpointMeta(BaseModel):
    kind: Literal["training", "classifier"] = "training"
    config: Dict[str, Any] = Field(default_factory=dict)
    iteration: int = 0
    seed: int = 0
    controller: Optional[Dict[str, Any]] = None
    optimizers: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    attributes: Dict[str, AttributeRecord] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)


@dataclass
class Checkpoint:
    meta: CheckpointMeta
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)


# ============================================================
# Encoding
# ============================================================


def _encode(checkpoint: Checkpoint) -> bytes:
    meta = checkpoint.meta.model_dump_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(checkpoint.tensors))]
    for name, array in checkpoint.tensors.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise UsageError(f"save_checkpoint: tensor name too long: {name[:40]}...")
        array = np.asarray(array)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=VALUE_DTYPE).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes, path: Path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if size < 0:
            raise FormatError(f"{self.path}: corrupt checkpoint (negative length {size} at offset {self.offset})")
        end = self.offset + size
        if end > len(self.payload):
            raise FormatError(f"{self.path}: truncated checkpoint (needed {size} bytes at offset {self.offset})")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode(payload: bytes, path: Path) -> Checkpoint:
    reader = _Reader(payload, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, meta_length = reader.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = CheckpointMeta.model_validate_json(reader.take(meta_length))
    except ValidationError as e:
        raise FormatError(f"{path}: corrupt metadata ({e.error_count()} errors)") from e

    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{path}: corrupt tensor name") from e
        (rank,) = reader.unpack("<I")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        size = math.prod(dims)
        remaining = len(payload) - reader.offset
        if size * VALUE_DTYPE.itemsize > remaining:
            raise FormatError(f"{path}: truncated checkpoint (tensor {name} of shape {tuple(dims)} needs {size * VALUE_DTYPE.itemsize} bytes, {remaining} left)")
        values = np.frombuffer(reader.take(size * VALUE_DTYPE.itemsize), dtype=VALUE_DTYPE)
        tensors[name] = values.astype(np.float32).reshape(dims)
    if reader.offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - reader.offset} trailing bytes after the last tensor")
    return Checkpoint(meta=meta, tensors=tensors)


# ============================================================
# Files
# ============================================================


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write atomically: the payload goes to a sibling temp file that replaces `path`."""
    path = Path(path)
    payload = _encode(checkpoint)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as e:
        raise StorageError(f"{path}: cannot write checkpoint ({e})") from e
    logger.debug(f"save_checkpoint: {len(checkpoint.tensors)} tensors, {len(payload)} bytes to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except FileNotFoundError as e:
        raise UsageError(f"{path}: checkpoint not found") from e
    except OSError as e:
        raise StorageError(f"{path}: cannot read checkpoint ({e})") from e
    return _decode(payload, path)

