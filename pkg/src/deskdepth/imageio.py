"""PPM (P6, 8-bit) and PFM (single-channel ``Pf``) readers/writers, plus false colour."""

from __future__ import annotations

import logging
import re
from importlib import resources
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class FormatError(ValueError):
    """Malformed or unsupported image file."""


def _read_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens (skipping # comments)."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*").match(buf, pos)
        pos = m.end()
        m = re.compile(rb"\S+").match(buf, pos)
        if m is None:
            raise FormatError("truncated header")
        tokens.append(m.group())
        pos = m.end()
    return tokens, pos


def read_ppm(path) -> np.ndarray:
    """Decode a binary P6 file with maxval 255 into a (3, H, W) array in [0, 1]."""
    buf = Path(path).read_bytes()
    tokens, pos = _read_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a P6 PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}, only 255 is handled")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid size {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    payload = buf[pos : pos + need]
    if len(payload) != need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] (or uint8) as P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {image.shape}")
    data = image if image.dtype == np.uint8 else to_uint8(image)
    _, h, w = data.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(data.transpose(1, 2, 0)).tobytes())


def read_pfm(path) -> np.ndarray:
    """Decode a single-channel PFM into an (H, W) float32 array, top row first.

    A negative scale denotes little-endian data, a positive one big-endian.
    """
    buf = Path(path).read_bytes()
    tokens, pos = _read_tokens(buf, 4)
    if tokens[0] != b"Pf":
        raise FormatError(f"{path}: expected single-channel 'Pf' PFM, got {tokens[0]!r}")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise FormatError(f"{path}: malformed PFM header") from None
    if width < 1 or height < 1 or scale == 0:
        raise FormatError(f"{path}: invalid PFM header values")
    pos += 1
    dtype = "<f4" if scale < 0 else ">f4"
    need = width * height * 4
    payload = buf[pos : pos + need]
    if len(payload) != need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    rows = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    # PFM stores the bottom row first
    return np.ascontiguousarray(rows[::-1]).astype(np.float32)


def write_pfm(path, values: np.ndarray) -> None:
    """Write an (H, W) map as little-endian ``Pf`` with scale -1.0."""
    values = np.asarray(values)
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    if values.ndim != 2:
        raise ValueError(f"expected an (H, W) map, got {values.shape}")
    h, w = values.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(values[::-1].astype("<f4")).tobytes()
    Path(path).write_bytes(header + payload)


_COLORMAP: np.ndarray | None = None


def colormap() -> np.ndarray:
    """The shipped 256 x 3 uint8 colour table (dark to bright)."""
    global _COLORMAP
    if _COLORMAP is None:
        text = resources.files("deskdepth").joinpath("data/magma.txt").read_text()
        _COLORMAP = np.loadtxt(text.splitlines(), dtype=np.uint8).reshape(256, 3)
    return _COLORMAP


def colormap_indices(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("false colour needs finite values")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        logger.warning("false colour of a constant map: all pixels get one colour")
        return np.zeros(values.shape, dtype=np.int64)
    return np.clip(np.round((values - lo) / (hi - lo) * 255.0), 0, 255).astype(np.int64)


def false_color(values: np.ndarray) -> np.ndarray:
    """Min-max normalise a (H, W) map and look it up in the colour table -> (3, H, W) uint8."""
    values = np.asarray(values)
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    idx = colormap_indices(values)
    return colormap()[idx].transpose(2, 0, 1)
