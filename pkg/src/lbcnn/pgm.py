"""Binary 8-bit PGM (P5) reading and writing."""

import numpy as np

from .errors import FormatError


def _tokens(buf, count):
    """First ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise FormatError("truncated PGM header")
        if buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        out.append(buf[start:pos])
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path):
    """Return a (H, W) uint8 array from a P5 file with maxval <= 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic != b"P5":
        raise FormatError(f"not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("non-numeric PGM header field") from None
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise FormatError(f"unsupported PGM geometry {w}x{h} maxval {maxval}")
    raster = buf[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(f"PGM raster has {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, img):
    """Write a 2-D array as P5 after rounding and clamping to [0, 255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError(f"PGM needs a 2-D array, got shape {img.shape}")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
