"""Deterministic synthetic aerial tiles: flat-roofed buildings on gently varying
ground, rendered with height-dependent roof brightness and hard cast shadows.

Tile ``i`` of a dataset draws from ``SplitMix64(seed).split(i)``, so tiles can be
generated in any order or in parallel with identical results.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .prng import SplitMix64
from .raster import ImageTile, RasterGrid, load_image, load_raster, save_image, save_raster, to_bytes_u8

GROUND_RGB = np.array([0.38, 0.44, 0.30])
SHADOW_FACTOR = 0.45


@dataclass(frozen=True)
class SceneConfig:
    tile_size: int = 320
    n_buildings: tuple[int, int] = (5, 12)
    height_mu: float = math.log(6.0)
    height_sigma: float = 0.6
    max_height: float = 40.0
    footprint_px: tuple[int, int] = (12, 40)
    min_gap_px: int = 2
    ground_texture_amp: float = 0.5
    sun_azimuth: float = 135.0
    shadow_px_per_meter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile size must be positive")
        lo, hi = self.n_buildings
        if lo < 0 or hi < lo:
            raise ValueError(f"bad building count range {self.n_buildings}")
        flo, fhi = self.footprint_px
        if flo < 1 or fhi < flo:
            raise ValueError(f"bad footprint range {self.footprint_px}")
        if self.ground_texture_amp < 0 or self.shadow_px_per_meter < 0:
            raise ValueError("texture amplitude and shadow length must be non-negative")


@dataclass(frozen=True)
class Building:
    x0: int
    y0: int
    w: int
    h: int
    height: float

    def overlaps(self, other: "Building", gap: int) -> bool:
        return not (self.x0 + self.w + gap <= other.x0 or other.x0 + other.w + gap <= self.x0
                    or self.y0 + self.h + gap <= other.y0 or other.y0 + other.h + gap <= self.y0)


def sample_height(config: SceneConfig, rng: SplitMix64) -> float:
    h = math.exp(config.height_mu + config.height_sigma * rng.normal())
    return min(max(h, 0.0), config.max_height)


def place_buildings(config: SceneConfig, rng: SplitMix64) -> list[Building]:
    """Rejection-sample non-overlapping footprints."""
    size = config.tile_size
    target = rng.randint(*config.n_buildings)
    flo, fhi = config.footprint_px
    fhi = min(fhi, size)
    flo = min(flo, fhi)
    placed: list[Building] = []
    for _ in range(50 * target):
        if len(placed) == target:
            break
        w, h = rng.randint(flo, fhi), rng.randint(flo, fhi)
        cand = Building(rng.randbelow(size - w + 1), rng.randbelow(size - h + 1), w, h,
                        sample_height(config, rng))
        if not any(cand.overlaps(b, config.min_gap_px) for b in placed):
            placed.append(cand)
    return placed


def smooth_field(size: int, rng: SplitMix64, cells: int) -> np.ndarray:
    """Bilinearly interpolated coarse Gaussian noise, rescaled to [0, 1]."""
    coarse = rng.normals((cells + 1) * (cells + 1)).reshape(cells + 1, cells + 1)
    pos = (np.arange(size) + 0.5) * cells / size
    i0 = np.minimum(np.floor(pos).astype(int), cells - 1)
    f = pos - i0
    rows = coarse[i0] * (1 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    field = rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]
    span = field.max() - field.min()
    return (field - field.min()) / span if span > 0 else np.zeros_like(field)


def roof_brightness(height):
    """Roof grey level; strictly increasing in height."""
    return 0.25 + 0.7 * (1.0 - np.exp(-np.asarray(height, dtype=np.float64) / 10.0))


def shadow_mask(b: Building, config: SceneConfig) -> np.ndarray:
    """Pixels swept by the footprint moved up to ``shadow_px_per_meter * height`` px
    along the azimuth (degrees clockwise from image up), excluding the footprint."""
    size = config.tile_size
    mask = np.zeros((size, size), dtype=bool)
    length = int(round(config.shadow_px_per_meter * b.height))
    az = math.radians(config.sun_azimuth)
    dx, dy = math.sin(az), -math.cos(az)
    for t in range(1, length + 1):
        ox, oy = int(round(t * dx)), int(round(t * dy))
        xa, xb = max(b.x0 + ox, 0), min(b.x0 + b.w + ox, size)
        ya, yb = max(b.y0 + oy, 0), min(b.y0 + b.h + oy, size)
        if xa < xb and ya < yb:
            mask[ya:yb, xa:xb] = True
    mask[b.y0:b.y0 + b.h, b.x0:b.x0 + b.w] = False
    return mask


def render_scene(config: SceneConfig, buildings: list[Building], rng: SplitMix64):
    """DSM and image for explicit buildings; ``rng`` supplies the textures."""
    size = config.tile_size
    cells = max(2, size // 40)
    ground = config.ground_texture_amp * smooth_field(size, rng, cells)
    tint = smooth_field(size, rng, max(2, size // 16))
    grain = rng.uniforms(size * size).reshape(size, size)

    dsm = ground.copy()
    roof = np.zeros((size, size), dtype=bool)
    for b in buildings:
        sl = (slice(b.y0, b.y0 + b.h), slice(b.x0, b.x0 + b.w))
        dsm[sl] = ground[sl].max() + b.height
        roof[sl] = True

    img = GROUND_RGB[None, None, :] * (0.8 + 0.4 * tint[..., None]) + 0.03 * (grain[..., None] - 0.5)
    shade = np.zeros((size, size), dtype=bool)
    for b in buildings:
        shade |= shadow_mask(b, config)
    shade &= ~roof
    img[shade] *= SHADOW_FACTOR
    for b in buildings:
        sl = (slice(b.y0, b.y0 + b.h), slice(b.x0, b.x0 + b.w))
        g = roof_brightness(b.height)
        img[sl] = np.array([g, g, 0.95 * g]) + 0.02 * (grain[sl][..., None] - 0.5)
    rgb = to_bytes_u8(img).astype(np.float32) / np.float32(255.0)
    return ImageTile(rgb), RasterGrid(dsm.astype(np.float32)), shade


def generate_tile(config: SceneConfig, index: int) -> tuple[ImageTile, RasterGrid]:
    rng = SplitMix64(config.seed).split(index)
    buildings = place_buildings(config, rng)
    image, dsm, _ = render_scene(config, buildings, rng)
    return image, dsm


def generate_pairs(config: SceneConfig, n_tiles: int, start: int = 0):
    return [generate_tile(config, i) for i in range(start, start + n_tiles)]


MANIFEST_FIELDS = ["index", "image", "dsm", "max_height"]


def generate_dataset(config: SceneConfig, n_tiles: int, out_dir) -> Path:
    """Write ``tile_NNNNN.ppm``/``.hmap`` pairs and ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for i in range(n_tiles):
            image, dsm = generate_tile(config, i)
            img_name, dsm_name = f"tile_{i:05d}.ppm", f"tile_{i:05d}.hmap"
            save_image(image, out / img_name)
            save_raster(dsm, out / dsm_name)
            w.writerow([i, img_name, dsm_name, repr(float(np.nanmax(dsm.data)))])
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_dataset(manifest_path) -> list[tuple[ImageTile, RasterGrid]]:
    base = Path(manifest_path).parent
    return [(load_image(base / row["image"]), load_raster(base / row["dsm"]))
            for row in read_manifest(manifest_path)]
