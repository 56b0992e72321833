"""Fixed 256-entry colour ramps for raster previews written as PPM.

Both ramps are piecewise-linear between the control points below, evaluated at
``i / 255`` for i = 0..255 and rounded half-up to bytes. Values map to ramp
indices by ``floor((v - vmin) / (vmax - vmin) * 256)`` clamped to [0, 255]; a
degenerate range (vmax == vmin) maps everything to index 0 (height mode) or the
centre entry 128 (signed mode).

Height ramp control points (position: RGB)::

    0.00: (68, 1, 84)   0.25: (59, 82, 139)   0.50: (33, 145, 140)
    0.75: (94, 201, 98) 1.00: (253, 231, 37)

Signed (difference) ramp::

    0.00: (33, 102, 172)   0.50: (247, 247, 247)   1.00: (178, 24, 43)
"""

from __future__ import annotations

import numpy as np

from .raster import RasterGrid, save_ppm_u8

HEIGHT_STOPS = [(0.00, (68, 1, 84)), (0.25, (59, 82, 139)), (0.50, (33, 145, 140)),
                (0.75, (94, 201, 98)), (1.00, (253, 231, 37))]
SIGNED_STOPS = [(0.00, (33, 102, 172)), (0.50, (247, 247, 247)), (1.00, (178, 24, 43))]


def build_ramp(stops) -> np.ndarray:
    pos = np.array([p for p, _ in stops])
    rgb = np.array([c for _, c in stops], dtype=np.float64)
    x = np.arange(256) / 255.0
    table = np.stack([np.interp(x, pos, rgb[:, ch]) for ch in range(3)], axis=1)
    table = np.floor(table + 0.5).astype(np.uint8)
    table.setflags(write=False)
    return table


HEIGHT_RAMP = build_ramp(HEIGHT_STOPS)
SIGNED_RAMP = build_ramp(SIGNED_STOPS)


def ramp_indices(values: np.ndarray, vmin: float, vmax: float, degenerate: int = 0) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if vmax <= vmin:
        return np.full(v.shape, degenerate, dtype=np.int64)
    idx = np.floor((v - vmin) / (vmax - vmin) * 256.0)
    idx = np.nan_to_num(idx, nan=0.0)
    return np.clip(idx, 0, 255).astype(np.int64)


def height_heatmap(grid: RasterGrid, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    data = grid.data
    vmin = float(np.nanmin(data)) if vmin is None else vmin
    vmax = float(np.nanmax(data)) if vmax is None else vmax
    return HEIGHT_RAMP[ramp_indices(data, vmin, vmax)]


def diff_heatmap(pred: RasterGrid, truth: RasterGrid, limit: float | None = None) -> np.ndarray:
    """Signed ramp of pred - truth, symmetric around zero (white)."""
    if pred.data.shape != truth.data.shape:
        raise ValueError("prediction and reference dimensions differ")
    diff = pred.data.astype(np.float64) - truth.data
    limit = float(np.nanmax(np.abs(diff))) if limit is None else limit
    return SIGNED_RAMP[ramp_indices(diff, -limit, limit, degenerate=128)]


def write_heatmap(rgb: np.ndarray, path) -> None:
    save_ppm_u8(rgb, path)
