"""Image values and their basic operations: resize, normalize, PPM/PGM file I/O.

Images are immutable [H, W, C] float64 arrays with values in [0, 1] and
C in {1, 3}. Grayscale stays 1-channel; nothing silently promotes to RGB.
On disk images are 8-bit binary PPM (P6, color) or PGM (P5, grayscale).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, ValidationError

MAXVAL = 255


@dataclass(frozen=True)
class Image:
    """Immutable channel-last image; pixels float64 in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise DimensionError(f"image must be [H, W, C], got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"empty image shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError(
                f"pixel values outside [0, 1]: min={arr.min():.4g} max={arr.max():.4g}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resize with half-pixel-center alignment.

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped
    to the valid range; same-size resize is therefore the exact identity.
    """
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resize target must be positive, got {out_h}x{out_w}")
    if out_h == img.height and out_w == img.width:
        return img
    out = _resize_bilinear_array(img.pixels, out_h, out_w)
    return Image(np.clip(out, 0.0, 1.0))


def _resize_bilinear_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = arr.shape[0], arr.shape[1]
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = arr[y0][:, x0] * (1 - wx) + arr[y0][:, x1] * wx
    bot = arr[y1][:, x0] * (1 - wx) + arr[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resample_region(
    img: Image, x0: float, y0: float, region_w: float, region_h: float,
    out_h: int, out_w: int,
) -> Image:
    """Bilinear resample of a float-coordinate rectangle to out_h x out_w.

    Sample points falling outside the image clamp to the nearest edge pixel,
    so windows that overhang the frame still yield a full-size output.
    """
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resample target must be positive, got {out_h}x{out_w}")
    if region_w <= 0 or region_h <= 0:
        raise DimensionError(f"region {region_w}x{region_h} must be positive")
    arr = img.pixels
    in_h, in_w = arr.shape[0], arr.shape[1]
    ys = y0 + (np.arange(out_h) + 0.5) * (region_h / out_h) - 0.5
    xs = x0 + (np.arange(out_w) + 0.5) * (region_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0i = np.floor(ys).astype(int)
    x0i = np.floor(xs).astype(int)
    y1i = np.minimum(y0i + 1, in_h - 1)
    x1i = np.minimum(x0i + 1, in_w - 1)
    wy = (ys - y0i)[:, None, None]
    wx = (xs - x0i)[None, :, None]
    top = arr[y0i][:, x0i] * (1 - wx) + arr[y0i][:, x1i] * wx
    bot = arr[y1i][:, x0i] * (1 - wx) + arr[y1i][:, x1i] * wx
    return Image(np.clip(top * (1 - wy) + bot * wy, 0.0, 1.0))


def resize_nearest_labels(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize for integer label grids (no invented labels)."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resize target must be positive, got {out_h}x{out_w}")
    in_h, in_w = labels.shape[0], labels.shape[1]
    ys = np.clip(np.round((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5), 0, in_h - 1).astype(int)
    xs = np.clip(np.round((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5), 0, in_w - 1).astype(int)
    return labels[ys][:, xs]


def quantize(img: Image) -> np.ndarray:
    """Map [0, 1] pixels to uint8 [0, 255] by rounding."""
    return np.round(img.pixels * MAXVAL).astype(np.uint8)


def save_image(img: Image, path: str | os.PathLike) -> None:
    """Write a binary PPM (3-channel) or PGM (1-channel), maxval 255."""
    magic = b"P6" if img.channels == 3 else b"P5"
    data = quantize(img)
    if img.channels == 1:
        data = data[:, :, 0]
    header = magic + f"\n{img.width} {img.height}\n{MAXVAL}\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())


def load_image(path: str | os.PathLike) -> Image:
    """Read a binary PPM/PGM file; raises FormatError with the byte offset on corruption."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 2:
        raise FormatError(f"{path}: file too short to hold a magic number", offset=0)
    magic = blob[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise FormatError(f"{path}: unsupported magic {magic!r} (want P5 or P6)", offset=0)

    pos = 2
    fields = []
    while len(fields) < 3:
        pos = _skip_space_and_comments(blob, pos, path)
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise FormatError(f"{path}: truncated header", offset=pos)
        try:
            fields.append(int(blob[start:pos]))
        except ValueError:
            raise FormatError(f"{path}: non-numeric header field {blob[start:pos]!r}", offset=start)
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}", offset=2)
    if maxval != MAXVAL:
        raise FormatError(f"{path}: unsupported maxval {maxval} (only {MAXVAL})", offset=2)
    pos += 1  # single whitespace byte separating header from raster
    expected = width * height * channels
    raster = blob[pos : pos + expected]
    if len(raster) != expected:
        raise FormatError(
            f"{path}: truncated raster, expected {expected} bytes, got {len(raster)}",
            offset=pos + len(raster),
        )
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / MAXVAL
    arr = arr.reshape(height, width, channels)
    return Image(arr)


def _skip_space_and_comments(blob: bytes, pos: int, path) -> int:
    while pos < len(blob):
        c = blob[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        else:
            return pos
    raise FormatError(f"{path}: truncated header", offset=pos)
