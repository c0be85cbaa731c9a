"""Binary tensor container shared by every module that persists arrays.

Layout: magic ``MOST``, format version (u16 LE), rank (u16 LE), one u64 LE
extent per axis, then the payload as little-endian IEEE float64, row-major.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MOST"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHH")


def write_tensor(stream: io.BufferedIOBase, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f8")
    # note: ascontiguousarray would promote rank-0 arrays to rank 1
    stream.write(_HEADER.pack(MAGIC, FORMAT_VERSION, arr.ndim))
    for extent in arr.shape:
        stream.write(struct.pack("<Q", extent))
    stream.write(np.ascontiguousarray(arr).tobytes() if arr.ndim else arr.tobytes())


def read_tensor(stream: io.BufferedIOBase) -> np.ndarray:
    header = stream.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise CheckpointError("truncated tensor container header")
    magic, version, rank = _HEADER.unpack(header)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    shape = []
    for _ in range(rank):
        raw = stream.read(8)
        if len(raw) != 8:
            raise CheckpointError("truncated tensor container extents")
        shape.append(struct.unpack("<Q", raw)[0])
    count = int(np.prod(shape)) if shape else 1
    payload = stream.read(count * 8)
    if len(payload) != count * 8:
        raise CheckpointError(
            f"truncated tensor payload: expected {count * 8} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
