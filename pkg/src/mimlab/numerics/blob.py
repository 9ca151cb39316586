"""Binary tensor blob format used inside checkpoints.

Layout (all integers little-endian):
    magic   "UMMT"
    u32     version (1)
    u32     name length, then UTF-8 name bytes
    u8      dtype tag: 0 = f32, 1 = f64
    u32     rank
    u64[]   extents
    payload row-major values, little-endian
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"UMMT"
VERSION = 1

_TAG_FOR = {"f32": 0, "f64": 1}
_DTYPE_FOR = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class BlobError(ValueError):
    """Malformed or truncated tensor blob."""


def write_blob(fh: BinaryIO, name: str, arr: np.ndarray) -> None:
    if arr.dtype == np.float32:
        tag = _TAG_FOR["f32"]
    elif arr.dtype == np.float64:
        tag = _TAG_FOR["f64"]
    else:
        raise BlobError(f"unsupported dtype {arr.dtype}")
    name_b = name.encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    fh.write(struct.pack("<I", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", tag))
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_FOR[tag]).tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise BlobError(f"truncated blob while reading {what}")
    return buf


def read_blob(fh: BinaryIO) -> tuple[str, np.ndarray]:
    magic = _read_exact(fh, 4, "magic")
    if magic != MAGIC:
        raise BlobError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != VERSION:
        raise BlobError(f"unsupported blob version {version}")
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
    name = _read_exact(fh, name_len, "name").decode("utf-8")
    (tag,) = struct.unpack("<B", _read_exact(fh, 1, "dtype tag"))
    if tag not in _DTYPE_FOR:
        raise BlobError(f"unknown dtype tag {tag}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "extents"))
    dtype = _DTYPE_FOR[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, count * dtype.itemsize, f"payload of {name!r}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return name, arr.astype(np.float32 if tag == 0 else np.float64)
