"""Portable graymap/pixmap (P5/P6) reading and writing.

Values map linearly between [0, 1] floats and integer samples. Writing is
canonical (single-space header, newline separators), so serialize ->
parse -> serialize is byte-identical.
"""

import numpy as np


def _read_header_token(f):
    token = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated PNM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_pnm(path):
    """Read a binary P5 (returns (h, w)) or P6 (returns (h, w, 3)) file."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")
        width = int(_read_header_token(f))
        height = int(_read_header_token(f))
        maxval = int(_read_header_token(f))
        if not 0 < maxval < 65536:
            raise ValueError(f"{path}: bad maxval {maxval}")
        channels = 1 if magic == b"P5" else 3
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = f.read(width * height * channels * dtype.itemsize)
        data = np.frombuffer(raw, dtype=dtype)
        if data.size != width * height * channels:
            raise ValueError(f"{path}: truncated pixel data")
    arr = data.astype(np.float64) / maxval
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3)


def _quantize(values, maxval):
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    q = np.rint(v * maxval)
    return q.astype(">u2" if maxval > 255 else "u1")


def write_pgm(path, values, maxval=65535):
    """Write a 2-D [0, 1] array as binary P5."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"write_pgm: need a 2-D array, got shape {values.shape}")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(_quantize(values, maxval).tobytes())


def write_ppm(path, values, maxval=255):
    """Write an (h, w, 3) [0, 1] array as binary P6."""
    values = np.asarray(values)
    if values.ndim != 3 or values.shape[2] != 3:
        raise ValueError(f"write_ppm: need an (h, w, 3) array, got shape {values.shape}")
    h, w, _ = values.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(_quantize(values, maxval).tobytes())
