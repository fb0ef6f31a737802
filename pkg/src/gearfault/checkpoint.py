"""
Binary parameter checkpoints.

Layout (little endian)::

    b"GFCK" | version u8 | meta_len u32 | meta JSON (utf-8)
    count u32 | count x record

    record = name_len u16 | name (utf-8) | ndim u8 | ndim x dim u32 | float64 values (row-major)

Values are always stored as float64; the original dtype of each array is kept
in the metadata so float32 parameters come back bit-identical.
"""

from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from .errors import FormatError
from .fileio import PathLike, atomic_write_bytes

MAGIC = b"GFCK"
VERSION = 1


def encode_checkpoint(state: Mapping[str, np.ndarray], metadata: Dict[str, Any]) -> bytes:
    meta = dict(metadata)
    meta["dtypes"] = {name: str(np.asarray(value).dtype) for name, value in state.items()}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<BI", VERSION, len(meta_bytes)))
    out.write(meta_bytes)
    out.write(struct.pack("<I", len(state)))
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.tobytes(order="C"))
    return out.getvalue()


def save_checkpoint(path: PathLike, state: Mapping[str, np.ndarray], metadata: Dict[str, Any]) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(state, metadata))


def _read(buf: io.BytesIO, size: int, what: str) -> bytes:
    chunk = buf.read(size)
    if len(chunk) != size:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return chunk


def decode_checkpoint(payload: bytes) -> Tuple["OrderedDict[str, np.ndarray]", Dict[str, Any]]:
    buf = io.BytesIO(payload)
    if _read(buf, 4, "magic") != MAGIC:
        raise FormatError("not a gearfault checkpoint (bad magic)")
    version, meta_len = struct.unpack("<BI", _read(buf, 5, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    metadata = json.loads(_read(buf, meta_len, "metadata").decode("utf-8"))
    dtypes = metadata.get("dtypes", {})
    (count,) = struct.unpack("<I", _read(buf, 4, "record count"))
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read(buf, 2, "name length"))
        name = _read(buf, name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", _read(buf, 1, "ndim"))
        shape = struct.unpack(f"<{ndim}I", _read(buf, 4 * ndim, "shape"))
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(_read(buf, 8 * size, name), dtype="<f8").reshape(shape)
        state[name] = values.astype(dtypes.get(name, "float64"))
    return state, metadata


def load_checkpoint(path: PathLike) -> Tuple["OrderedDict[str, np.ndarray]", Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint {path} not found")
    return decode_checkpoint(path.read_bytes())
