"""Raster and image containers, file I/O, patch localization and patch planning.

HMAP layout (all little-endian)::

    b"HMAP" | u32 width | u32 height | width*height f32, row-major, top row first

Images are binary PPM (P6, maxval 255). Bytes map to floats by ``/255`` and
back by ``floor(x*255 + 0.5)``.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .prng import SplitMix64

HMAP_MAGIC = b"HMAP"
_HEADER = struct.Struct("<4sII")
# 2**31 bytes of payload; anything bigger is treated as a corrupt header.
MAX_PIXELS = (1 << 29)


class RasterFormatError(ValueError):
    """Malformed HMAP or PPM file."""


class CropError(ValueError):
    """A requested patch does not fit, or holds no usable pixels."""


@dataclass(frozen=True)
class RasterGrid:
    """Single-channel height raster in meters. ``data`` has shape (height, width)."""

    data: np.ndarray
    nodata: float = math.nan

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"raster must be a non-empty 2-D array, got shape {arr.shape}")
        if np.isinf(arr).any():
            raise ValueError("raster values must be finite (NaN marks nodata)")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def nodata_mask(self) -> np.ndarray:
        return np.isnan(self.data)

    def crop(self, x0: int, y0: int, size: int) -> "RasterGrid":
        _check_rect(self.width, self.height, x0, y0, size)
        return RasterGrid(self.data[y0:y0 + size, x0:x0 + size])


@dataclass(frozen=True)
class ImageTile:
    """H x W x 3 float image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def crop(self, x0: int, y0: int, size: int) -> "ImageTile":
        _check_rect(self.width, self.height, x0, y0, size)
        return ImageTile(self.data[y0:y0 + size, x0:x0 + size])

    def to_chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))


@dataclass(frozen=True)
class PatchSpec:
    x0: int
    y0: int
    size: int
    local_min: float


def _check_rect(width, height, x0, y0, size):
    if size < 1 or x0 < 0 or y0 < 0 or x0 + size > width or y0 + size > height:
        raise CropError(
            f"patch (x0={x0}, y0={y0}, size={size}) does not fit a {width}x{height} raster")


# -- HMAP ---------------------------------------------------------------------

def save_raster(grid: RasterGrid, path) -> None:
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(HMAP_MAGIC, grid.width, grid.height))
        fh.write(payload)


def raster_to_bytes(grid: RasterGrid) -> bytes:
    return _HEADER.pack(HMAP_MAGIC, grid.width, grid.height) + grid.data.astype("<f4").tobytes()


def raster_from_bytes(buf: bytes) -> RasterGrid:
    if len(buf) < _HEADER.size:
        raise RasterFormatError("truncated HMAP header")
    magic, width, height = _HEADER.unpack_from(buf)
    if magic != HMAP_MAGIC:
        raise RasterFormatError(f"bad magic {magic!r}, expected {HMAP_MAGIC!r}")
    if width == 0 or height == 0 or width * height > MAX_PIXELS:
        raise RasterFormatError(f"unsupported HMAP dimensions {width}x{height}")
    expected = _HEADER.size + 4 * width * height
    if len(buf) != expected:
        raise RasterFormatError(
            f"HMAP payload is {len(buf) - _HEADER.size} bytes, expected {expected - _HEADER.size}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(height, width)
    return RasterGrid(data.astype(np.float32))


def load_raster(path) -> RasterGrid:
    return raster_from_bytes(Path(path).read_bytes())


# -- PPM ----------------------------------------------------------------------

def to_bytes_u8(values: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(values, 0.0, 1.0).astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def save_ppm_u8(rgb: np.ndarray, path) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def save_image(image: ImageTile, path) -> None:
    save_ppm_u8(to_bytes_u8(image.data), path)


def _ppm_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise RasterFormatError("truncated PPM header")
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def load_ppm_u8(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise RasterFormatError(f"not a binary PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise RasterFormatError("non-integer PPM header field") from exc
    if maxval != 255:
        raise RasterFormatError(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1 or width * height > MAX_PIXELS:
        raise RasterFormatError(f"unsupported PPM dimensions {width}x{height}")
    n = width * height * 3
    if len(buf) - offset < n:
        raise RasterFormatError("truncated PPM payload")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset).reshape(height, width, 3)


def load_image(path) -> ImageTile:
    return ImageTile(load_ppm_u8(path).astype(np.float32) / np.float32(255.0))


# -- patches ------------------------------------------------------------------

def localize_patch(grid: RasterGrid, x0: int, y0: int, size: int) -> tuple[RasterGrid, PatchSpec]:
    """Crop a square patch and subtract its own minimum height."""
    crop = grid.crop(x0, y0, size).data
    if np.isnan(crop).all():
        raise CropError(f"patch at ({x0}, {y0}) holds only nodata")
    if np.isnan(crop).any():
        raise CropError(f"patch at ({x0}, {y0}) contains nodata pixels")
    local_min = crop.min()
    return RasterGrid(crop - local_min), PatchSpec(x0, y0, size, float(local_min))


def random_crop_pair(image: ImageTile, dsm: RasterGrid, size: int, rng: SplitMix64,
                     max_tries: int = 64) -> tuple[ImageTile, RasterGrid, PatchSpec]:
    """Crop image and localized DSM at the same uniformly drawn position.

    Positions whose DSM crop holds nodata are rejected and redrawn.
    """
    if (image.width, image.height) != (dsm.width, dsm.height):
        raise CropError("image and DSM dimensions differ")
    if size > dsm.width or size > dsm.height:
        raise CropError(f"crop size {size} exceeds source {dsm.width}x{dsm.height}")
    for _ in range(max_tries):
        x0 = rng.randbelow(dsm.width - size + 1)
        y0 = rng.randbelow(dsm.height - size + 1)
        if np.isnan(dsm.data[y0:y0 + size, x0:x0 + size]).any():
            continue
        heights, spec = localize_patch(dsm, x0, y0, size)
        return image.crop(x0, y0, size), heights, spec
    raise CropError(f"no nodata-free {size}px crop found in {max_tries} draws")


@dataclass(frozen=True)
class PatchLayout:
    """Grid of square patches; ``xs``/``ys`` are the column and row offsets."""

    xs: tuple[int, ...]
    ys: tuple[int, ...]
    size: int
    overlap: int
    width: int = field(default=0)
    height: int = field(default=0)

    @property
    def rows(self) -> int:
        return len(self.ys)

    @property
    def cols(self) -> int:
        return len(self.xs)

    def rect(self, row: int, col: int) -> tuple[int, int, int]:
        return self.xs[col], self.ys[row], self.size

    @property
    def rects(self) -> list[tuple[int, int, int, int, int]]:
        """(row, col, x0, y0, size) for every patch, row-major."""
        return [(r, c, x, y, self.size) for r, y in enumerate(self.ys) for c, x in enumerate(self.xs)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "x0", "y0", "size"])
            w.writerows(self.rects)

    @classmethod
    def from_csv(cls, path, overlap: int = 2) -> "PatchLayout":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"empty layout file {path}")
        xs = {int(r["col"]): int(r["x0"]) for r in rows}
        ys = {int(r["row"]): int(r["y0"]) for r in rows}
        sizes = {int(r["size"]) for r in rows}
        if len(sizes) != 1:
            raise ValueError("layout patches must share one size")
        size = sizes.pop()
        xs_t = tuple(xs[c] for c in range(len(xs)))
        ys_t = tuple(ys[r] for r in range(len(ys)))
        if len(rows) != len(xs_t) * len(ys_t):
            raise ValueError("layout is not a full grid")
        return cls(xs_t, ys_t, size, overlap, xs_t[-1] + size, ys_t[-1] + size)


def _axis_offsets(n: int, size: int, overlap: int) -> tuple[int, ...]:
    stride = size - overlap
    offsets = list(range(0, n - size, stride))
    if not offsets or offsets[-1] != n - size:
        offsets.append(n - size)
    return tuple(offsets)


def plan_grid(width: int, height: int, patch_size: int = 256, overlap: int = 2) -> PatchLayout:
    """Tile an image with overlapping patches; the last row/column is clamped to the edge."""
    if overlap < 0 or overlap >= patch_size:
        raise ValueError(f"overlap must lie in [0, {patch_size}), got {overlap}")
    if width < patch_size or height < patch_size:
        raise CropError(f"image {width}x{height} is smaller than patch size {patch_size}")
    return PatchLayout(_axis_offsets(width, patch_size, overlap),
                       _axis_offsets(height, patch_size, overlap),
                       patch_size, overlap, width, height)
