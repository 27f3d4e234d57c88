"""The ``GFTN`` binary tensor container.

Layout of one record::

    b"GFTN" | version: u8 | rank: u8 | extents: rank x u32 LE | values: f64 LE, row-major

Several records may be concatenated in one file; parameter checkpoints and
dataset caches do exactly that. Float32 arrays are widened to float64 on
write, which is exact.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .errors import LoadError
from .fileio import atomic_write_bytes

MAGIC = b"GFTN"
VERSION = 1
_VALUE_DTYPE = np.dtype("<f8")


def encode(arr) -> bytes:
    a = np.asarray(arr)
    if a.dtype.kind not in "fiu":
        raise TypeError(f"cannot encode array of dtype {a.dtype}")
    if a.ndim > 255:
        raise ValueError("rank exceeds 255")
    if any(d >= 2**32 for d in a.shape):
        raise ValueError(f"extent too large for u32: {a.shape}")
    head = MAGIC + struct.pack("<BB", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype=_VALUE_DTYPE).tobytes()


def write_tensor(fh: BinaryIO, arr) -> None:
    fh.write(encode(arr))


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise LoadError(f"truncated GFTN stream while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise LoadError(f"bad GFTN magic {magic!r}")
    version, rank = struct.unpack("<BB", _read_exact(fh, 2, "header"))
    if version != VERSION:
        raise LoadError(f"unsupported GFTN version {version}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
    count = int(np.prod(shape, dtype=np.int64))
    raw = _read_exact(fh, count * _VALUE_DTYPE.itemsize, "values")
    return np.frombuffer(raw, dtype=_VALUE_DTYPE).astype(np.float64).reshape(shape)


def read_all(fh: BinaryIO) -> list[np.ndarray]:
    """Read records until end of stream."""
    out = []
    while True:
        pos = fh.tell()
        if not fh.read(1):
            return out
        fh.seek(pos)
        out.append(read_tensor(fh))


def save(path: str | Path, arrays: Iterable, prefix: bytes = b"") -> None:
    buf = io.BytesIO()
    buf.write(prefix)
    for a in arrays:
        write_tensor(buf, a)
    atomic_write_bytes(path, buf.getvalue())


def load(path: str | Path) -> list[np.ndarray]:
    try:
        with open(path, "rb") as fh:
            return read_all(fh)
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
