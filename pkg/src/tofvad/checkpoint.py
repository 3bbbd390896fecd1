"""Flat binary container for named parameter arrays.

Layout (all integers little-endian):

    magic    8 bytes  b"TOFVADCK"
    version  u32
    meta     u32 length + UTF-8 JSON (model description, config echo, ...)
    count    u32
    entry *  u16 name length + UTF-8 name
             u8  dtype-string length + ASCII numpy dtype string (e.g. "<f4")
             u8  ndim
             u64 per dimension
             u64 payload length + raw row-major array bytes

Round-trips are bit-exact: the bytes written for each array are exactly
``ascontiguousarray(arr).tobytes()`` with a little-endian dtype.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .ioutil import atomic_write_bytes

MAGIC = b"TOFVADCK"
VERSION = 1


def _le(arr: np.ndarray) -> np.ndarray:
    """Return *arr* contiguous with an explicitly little-endian dtype."""
    arr = np.asarray(arr)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)  # keeps 0-d arrays 0-d: they are contiguous
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write *arrays* and a JSON *meta* block to *path* atomically."""
    parts: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_blob)))
    parts.append(meta_blob)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = _le(arr)
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        payload = arr.tobytes(order="C")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", len(dtype_b)))
        parts.append(dtype_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    atomic_write_bytes(path, b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError("checkpoint file is truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint written by :func:`save`; returns (meta, arrays)."""
    rd = _Reader(Path(path).read_bytes())
    if rd.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a tofvad checkpoint (bad magic)")
    version = rd.unpack("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(rd.take(rd.unpack("<I")).decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    count = rd.unpack("<I")
    for _ in range(count):
        name = rd.take(rd.unpack("<H")).decode("utf-8")
        dtype = np.dtype(rd.take(rd.unpack("<B")).decode("ascii"))
        ndim = rd.unpack("<B")
        fmt = f"<{ndim}Q"
        shape = struct.unpack(fmt, rd.take(struct.calcsize(fmt))) if ndim else ()
        payload = rd.take(rd.unpack("<Q"))
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        arrays[name] = arr
    if rd.pos != len(rd.blob):
        raise ValueError(f"{path}: trailing bytes after last array")
    return meta, arrays
