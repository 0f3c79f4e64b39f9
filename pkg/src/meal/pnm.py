"""Minimal binary PPM (P6) / PGM (P5) reader and writer, 8-bit only."""

from pathlib import Path

import numpy as np


class PnmError(ValueError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PnmError("truncated header")
    return buf[start:pos], pos


def decode(buf: bytes) -> np.ndarray:
    """Decode P5/P6 bytes to a uint8 array of shape (h, w) or (h, w, 3)."""
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise PnmError(f"bad header field {tok!r}") from None
    width, height, maxval = fields
    if maxval != 255:
        raise PnmError(f"only 8-bit maxval 255 supported, got {maxval}")
    # exactly one whitespace byte separates header from raster
    pos += 1
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    raster = buf[pos : pos + size]
    if len(raster) != size:
        raise PnmError(f"raster truncated: expected {size} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 3:
        return arr.reshape(height, width, 3).copy()
    return arr.reshape(height, width).copy()


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise PnmError(f"expected uint8 array, got {arr.dtype}")
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise PnmError(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + np.ascontiguousarray(arr).tobytes()


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode(arr))
