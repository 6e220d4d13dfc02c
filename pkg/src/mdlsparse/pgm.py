"""Binary PGM (P5, maxval 255) reader and writer.

Writes are bit-exact: header ``P5\\n<width> <height>\\n255\\n`` followed by raw
rows. The reader accepts the general whitespace/comment form of the header but
requires maxval 255.
"""

from __future__ import annotations

import numpy as np


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated PGM header")
    return buf[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM file into a uint8 height-by-width array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise ValueError(f"not a binary PGM (P5) file: magic {magic!r}")
    width_tok, pos = _read_token(buf, pos)
    height_tok, pos = _read_token(buf, pos)
    maxval_tok, pos = _read_token(buf, pos)
    width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise ValueError(f"bad PGM dimensions {width}x{height}")
    pos += 1  # the single whitespace byte after maxval
    raster = buf[pos : pos + width * height]
    if len(raster) != width * height:
        raise ValueError("PGM raster shorter than header promises")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write an image as binary P5 PGM; values are rounded and clipped to [0, 255]."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("image must be 2-D grayscale")
    data = np.clip(np.rint(img.astype(np.float64)), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())
