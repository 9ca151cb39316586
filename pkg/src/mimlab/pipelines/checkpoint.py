"""Checkpoint container: JSON header plus named tensor blobs.

Layout: magic "UMMC", u32 container version, u64 header length, UTF-8
header JSON, then one self-describing tensor blob per entry of the
header's `tensors` list, in that order. The header records the model
spec, the training step, and the master seed (all step-level randomness
is derived from (seed, step), so that pair is the whole PRNG state).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..numerics import BlobError, read_blob, write_blob

MAGIC = b"UMMC"
VERSION = 1
SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    doc = dict(header)
    doc["schema_version"] = SCHEMA_VERSION
    doc["tensors"] = sorted(tensors)
    header_bytes = json.dumps(doc, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<Q", len(header_bytes)))
    buf.write(header_bytes)
    for name in doc["tensors"]:
        write_blob(buf, name, tensors[name])
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"schema version mismatch: {header.get('schema_version')}")
    tensors: dict[str, np.ndarray] = {}
    fh = io.BytesIO(raw[16 + hlen:])
    for expected in header["tensors"]:
        try:
            name, arr = read_blob(fh)
        except BlobError as e:
            raise CheckpointError(f"missing tensor section {expected!r}: {e}") from e
        if name != expected:
            raise CheckpointError(f"tensor order mismatch: {name!r} vs {expected!r}")
        tensors[name] = arr
    return header, tensors


def model_tensors(model) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in model.named_parameters()}


def restore_model_tensors(model, tensors: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
