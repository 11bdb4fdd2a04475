"""Netpbm greyscale/colour images (P2, P3, P5, P6) with maxval 255."""

from __future__ import annotations

import os

import numpy as np

from ..errors import InvalidArgumentError, ParseError, UnsupportedFormatError

_MAGICS = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}
_WHITESPACE = b" \t\n\r\v\f"


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def skip_space(self):
        data, n = self.data, len(self.data)
        while self.pos < n:
            ch = data[self.pos:self.pos + 1]
            if ch == b"#":
                while self.pos < n and data[self.pos:self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif ch in _WHITESPACE:
                self.pos += 1
            else:
                break

    def integer(self, what):
        self.skip_space()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos:self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            if start >= len(self.data):
                raise ParseError(f"unexpected end of file while reading {what}", start)
            raise ParseError(f"expected decimal {what}", start)
        return int(self.data[start:self.pos])


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode to a uint8 array of shape (H, W) or (H, W, 3)."""
    magic = data[:2]
    if magic not in _MAGICS:
        raise ParseError(f"bad magic number {magic!r}", 0)
    channels, raw = _MAGICS[magic]
    r = _Reader(data)
    r.pos = 2
    if r.pos < len(data) and data[r.pos:r.pos + 1] not in _WHITESPACE + b"#":
        raise ParseError("missing whitespace after magic number", r.pos)
    width = r.integer("width")
    height = r.integer("height")
    maxval_at = r.pos
    maxval = r.integer("maxval")
    if width <= 0 or height <= 0:
        raise ParseError(f"non-positive image size {width}x{height}", maxval_at)
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval {maxval} not supported (only 255)")
    count = width * height * channels
    shape = (height, width, channels) if channels == 3 else (height, width)
    if raw:
        if r.pos >= len(data) or data[r.pos:r.pos + 1] not in _WHITESPACE:
            raise ParseError("missing whitespace before raster", r.pos)
        start = r.pos + 1
        body = data[start:start + count]
        if len(body) < count:
            raise ParseError(
                f"truncated raster: expected {count} bytes, found {len(body)}", len(data)
            )
        return np.frombuffer(body, dtype=np.uint8).reshape(shape).copy()
    values = np.empty(count, dtype=np.uint8)
    for i in range(count):
        r.skip_space()
        at = r.pos
        v = r.integer("sample")
        if v > maxval:
            raise ParseError(f"sample {v} exceeds maxval {maxval}", at)
        values[i] = v
    return values.reshape(shape)


def encode_pnm(pixels, raw=True) -> bytes:
    """Encode a uint8 (H, W) or (H, W, 3) array; ``raw`` picks P5/P6 over P2/P3."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise InvalidArgumentError(f"encode_pnm needs uint8 pixels, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5" if raw else b"P2"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6" if raw else b"P3"
    else:
        raise InvalidArgumentError(f"cannot encode array of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    if raw:
        return header + pixels.tobytes()
    per_row = w * (3 if pixels.ndim == 3 else 1)
    rows = pixels.reshape(h, per_row)
    body = "".join(" ".join(str(int(v)) for v in row) + "\n" for row in rows)
    return header + body.encode("ascii")


def quantize(x) -> np.ndarray:
    """Map [0, 1] floats to uint8 with round(x * 255) (half away from zero)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)):
        raise InvalidArgumentError("cannot quantize non-finite values")
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def image_bytes(x, raw=True) -> bytes:
    """Quantize a float mask (H, W) or image (H, W, C) and encode it."""
    q = quantize(x)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[..., 0]
    return encode_pnm(q, raw=raw)


def load_image(path) -> np.ndarray:
    """Read a PGM/PPM file as float64 (H, W, C) in [0, 1]."""
    with open(path, "rb") as fh:
        pixels = decode_pnm(fh.read())
    img = pixels.astype(np.float64) / 255.0
    return img[..., None] if img.ndim == 2 else img


def load_mask(path) -> np.ndarray:
    img = load_image(path)
    if img.shape[2] == 3:
        img = img.mean(axis=2, keepdims=True)
    return img[..., 0]


def save_mask(path, m, raw=True):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[..., 0]
    if m.ndim != 2:
        raise InvalidArgumentError(f"mask must be (H, W), got shape {m.shape}")
    _write(path, image_bytes(m, raw=raw))


def save_image(path, c, raw=True):
    _write(path, image_bytes(c, raw=raw))


def _write(path, data):
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
