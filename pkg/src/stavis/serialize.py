"""Raw float64 tensor format.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic b"STVTNSR1"
    offset 8   uint64    rank r
    offset 16  r*uint64  shape, outermost axis first
    then       float64   prod(shape) values, row-major, little-endian
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STVTNSR1"
_HEADER = struct.Struct("<8sQ")


def encode_array(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    shape = struct.pack(f"<{a.ndim}Q", *a.shape)
    return _HEADER.pack(MAGIC, a.ndim) + shape + a.tobytes(order="C")


def decode_array(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; returns (array, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise ValueError("truncated tensor header")
    magic, rank = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    if rank > 32:
        raise ValueError(f"implausible tensor rank {rank}")
    offset += _HEADER.size
    if len(buf) - offset < 8 * rank:
        raise ValueError("truncated tensor shape")
    shape = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    n = int(np.prod(shape, dtype=np.int64)) if rank else 1
    end = offset + 8 * n
    if len(buf) < end:
        raise ValueError(f"truncated tensor data: need {8 * n} bytes, have {len(buf) - offset}")
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).astype(np.float64)
    return data.reshape(shape), end


def write_raw(path, array) -> None:
    Path(path).write_bytes(encode_array(array))


def read_raw(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    array, end = decode_array(buf)
    if end != len(buf):
        raise ValueError(f"{path}: {len(buf) - end} trailing bytes after tensor")
    return array
