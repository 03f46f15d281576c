"""
Binary checkpoint format (little-endian):

    magic "DJRH" | version u32 | header field count u16
    per header field: name length u16, UTF-8 name, value i32
    param count u32
    per entry: name length u16, UTF-8 name, ndim u8, dims u32 * ndim, float32 data

The integer header sits between the version and the param count so the
architecture can be read before any tensor; a reader that skips the header
block sees the plain magic | version | param count | entries layout.

Optimizer state is stored as ordinary entries under the reserved names
"adam.m.<name>", "adam.v.<name>" and "adam.t".
"""
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from derain.errors import (
    CheckpointFormatError, CheckpointShapeError, CheckpointTruncatedError, CheckpointVersionError
)
from derain.optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"DJRH"
FORMAT_VERSION = 1
MOMENT1_PREFIX = "adam.m."
MOMENT2_PREFIX = "adam.v."
STEP_KEY = "adam.t"
_FLOAT = np.dtype("<f4")


@dataclass
class Checkpoint:
    header: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_t: Optional[int] = None

    def restore_state(self, state: AdamState) -> AdamState:
        """Copy saved moments and step counter into an optimizer state"""
        if self.adam_t is not None:
            state.t = self.adam_t
            state.m = {k: v.copy() for k, v in self.adam_m.items()}
            state.v = {k: v.copy() for k, v in self.adam_v.items()}
        return state


def _encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _entries(params: dict, state: Optional[AdamState]):
    for name in params:
        yield name, params[name]
    if state is not None and state.t > 0:
        for name in params:
            yield MOMENT1_PREFIX + name, state.m[name]
        for name in params:
            yield MOMENT2_PREFIX + name, state.v[name]
        yield STEP_KEY, np.asarray(state.t, dtype=_FLOAT)


def encode_checkpoint(params: dict, state: Optional[AdamState] = None, header: Optional[dict] = None) -> bytes:
    header = header or {}
    chunks = [MAGIC, struct.pack("<IH", FORMAT_VERSION, len(header))]
    for key, value in header.items():
        chunks.append(_encode_name(key) + struct.pack("<i", int(value)))
    entries = list(_entries(params, state))
    chunks.append(struct.pack("<I", len(entries)))
    for name, array in entries:
        array = np.asarray(array)
        chunks.append(_encode_name(name))
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())
    return b"".join(chunks)


def save_checkpoint(path, params: dict, state: Optional[AdamState] = None, header: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_checkpoint(params, state, header)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path} ({len(payload)} bytes, {len(params)} params)")
    return path


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: needed {size} bytes at offset {self.offset}, file has {len(self.payload)}"
            )
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(f"entry name is not valid UTF-8: {e}")


def decode_checkpoint(payload: bytes) -> Checkpoint:
    reader = _Reader(payload)
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError("not a checkpoint file: bad magic bytes")
    version, field_count = reader.unpack("<IH")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (this build reads {FORMAT_VERSION})")

    checkpoint = Checkpoint()
    for _ in range(field_count):
        key = reader.name()
        (checkpoint.header[key],) = reader.unpack("<i")

    (entry_count,) = reader.unpack("<I")
    for _ in range(entry_count):
        name = reader.name()
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        array = np.frombuffer(reader.take(count * _FLOAT.itemsize), dtype=_FLOAT).reshape(dims)
        array = array.astype(np.float32)
        if name == STEP_KEY:
            checkpoint.adam_t = int(array)
        elif name.startswith(MOMENT1_PREFIX):
            checkpoint.adam_m[name[len(MOMENT1_PREFIX):]] = array
        elif name.startswith(MOMENT2_PREFIX):
            checkpoint.adam_v[name[len(MOMENT2_PREFIX):]] = array
        else:
            checkpoint.params[name] = array
    if reader.offset != len(payload):
        raise CheckpointFormatError(f"{len(payload) - reader.offset} trailing bytes after last entry")

    for table in (checkpoint.adam_m, checkpoint.adam_v):
        for name, moment in table.items():
            if name not in checkpoint.params:
                raise CheckpointShapeError(f"optimizer state references unknown parameter {name!r}")
            if moment.shape != checkpoint.params[name].shape:
                raise CheckpointShapeError(
                    f"optimizer state for {name!r} has shape {moment.shape}, parameter has {checkpoint.params[name].shape}"
                )
    if checkpoint.adam_t is not None and set(checkpoint.adam_m) != set(checkpoint.params):
        raise CheckpointShapeError("optimizer moments do not cover every parameter")
    return checkpoint


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    checkpoint = decode_checkpoint(path.read_bytes())
    logger.info(f"Loaded checkpoint {path} ({len(checkpoint.params)} params, step {checkpoint.adam_t})")
    return checkpoint


def check_param_shapes(expected: dict, loaded: dict):
    """Raise if a loaded parameter table disagrees with a freshly built network"""
    if set(expected) != set(loaded):
        diff = sorted(set(expected) ^ set(loaded))
        raise CheckpointShapeError(f"checkpoint parameter names disagree with the network: {diff}")
    for name, value in expected.items():
        if value.shape != loaded[name].shape:
            raise CheckpointShapeError(
                f"parameter {name!r}: checkpoint has {loaded[name].shape}, network expects {value.shape}"
            )
