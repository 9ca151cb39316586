"""Binary netpbm readers/writers: P6 (RGB) for images, P5 (gray) for masks."""

from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    """Malformed header or truncated payload."""


def _read_header(data: bytes, magic: bytes):
    if data[:2] != magic:
        raise NetpbmError(f"bad magic {data[:2]!r}, expected {magic!r}")
    # header tokens may be separated by arbitrary whitespace and '#' comments
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise NetpbmError("truncated header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError as e:
            raise NetpbmError(f"non-numeric header field {data[start:pos]!r}") from e
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise NetpbmError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"only 8-bit maxval 255 supported, got {maxval}")
    return width, height, pos


def read_p6(data: bytes) -> np.ndarray:
    """P6 bytes -> uint8 array [H, W, 3]."""
    width, height, pos = _read_header(data, b"P6")
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) != need:
        raise NetpbmError(f"truncated payload: want {need} bytes, have {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def write_p6(pixels: np.ndarray) -> bytes:
    """uint8 array [H, W, 3] -> P6 bytes."""
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise NetpbmError("write_p6 expects uint8 [H, W, 3]")
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_p5(data: bytes) -> np.ndarray:
    """P5 bytes -> uint8 array [H, W]."""
    width, height, pos = _read_header(data, b"P5")
    need = width * height
    payload = data[pos:pos + need]
    if len(payload) != need:
        raise NetpbmError(f"truncated payload: want {need} bytes, have {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def write_p5(pixels: np.ndarray) -> bytes:
    """uint8 array [H, W] -> P5 bytes."""
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise NetpbmError("write_p5 expects uint8 [H, W]")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()
