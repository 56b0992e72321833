"""Merge per-patch localized height predictions into one seamless raster.

The top-left patch is the anchor. Patches in the first row are shifted left to
right, each against its already-shifted left neighbour; then every column is
shifted top to bottom against the patch above. A shift is the difference of the
two patches' means over their shared rectangle. Pixels covered by several
patches take the mean of the shifted contributions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .raster import PatchLayout, RasterGrid, plan_grid  # noqa: F401  (re-exported)


class StitchError(ValueError):
    pass


def shared_region(rect_a, rect_b):
    """Intersection of two (x0, y0, size) rects as local slices into each patch.

    Returns ``(slices_a, slices_b)`` or ``None`` when the rects do not overlap.
    """
    ax, ay, asz = rect_a
    bx, by, bsz = rect_b
    x0, x1 = max(ax, bx), min(ax + asz, bx + bsz)
    y0, y1 = max(ay, by), min(ay + asz, by + bsz)
    if x0 >= x1 or y0 >= y1:
        return None
    sa = (slice(y0 - ay, y1 - ay), slice(x0 - ax, x1 - ax))
    sb = (slice(y0 - by, y1 - by), slice(x0 - bx, x1 - bx))
    return sa, sb


def estimate_shift(prev_patch: np.ndarray, next_patch: np.ndarray, prev_rect, next_rect) -> float:
    """Offset to add to ``next_patch`` so both patches agree in mean over their overlap."""
    region = shared_region(prev_rect, next_rect)
    if region is None:
        raise StitchError(f"patches {prev_rect} and {next_rect} do not overlap")
    sa, sb = region
    prev_vals = np.asarray(prev_patch, dtype=np.float64)[sa]
    next_vals = np.asarray(next_patch, dtype=np.float64)[sb]
    return float(prev_vals.mean() - next_vals.mean())


@dataclass
class StitchResult:
    raster: RasterGrid
    shifts: np.ndarray          # (rows, cols) offset added to each patch
    base_height: float          # constant added to every patch (anchor re-referencing)

    def shift_rows(self, layout: PatchLayout):
        for r, c, x0, y0, size in layout.rects:
            yield r, c, x0, y0, float(self.shifts[r, c])

    def write_shift_report(self, layout: PatchLayout, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "x0", "y0", "shift"])
            for r, c, x0, y0, s in self.shift_rows(layout):
                w.writerow([r, c, x0, y0, repr(s)])


def _as_grid(patches, layout: PatchLayout):
    """Accept a flat row-major list or a nested [row][col] list of arrays."""
    flat = []
    for p in patches:
        if isinstance(p, (list, tuple)):
            flat.extend(p)
        else:
            flat.append(p)
    if len(flat) != layout.rows * layout.cols:
        raise StitchError(f"expected {layout.rows * layout.cols} patch predictions, got {len(flat)}")
    out = []
    for p in flat:
        arr = p.data if isinstance(p, RasterGrid) else np.asarray(p)
        if arr.shape != (layout.size, layout.size):
            raise StitchError(f"patch of shape {arr.shape} does not match layout size {layout.size}")
        out.append(arr.astype(np.float64))
    return [out[r * layout.cols:(r + 1) * layout.cols] for r in range(layout.rows)]


def stitch(patches, layout: PatchLayout, base_height: float = 0.0) -> StitchResult:
    """Seamless raster from localized patch predictions.

    ``base_height`` is added everywhere; pass the anchor patch's known minimum
    elevation to get absolute heights, otherwise output is relative to it.
    """
    grid = _as_grid(patches, layout)
    rows, cols = layout.rows, layout.cols
    shifts = np.zeros((rows, cols), dtype=np.float64)

    for c in range(1, cols):
        prev = grid[0][c - 1] + shifts[0, c - 1]
        shifts[0, c] = estimate_shift(prev, grid[0][c], layout.rect(0, c - 1), layout.rect(0, c))
    for c in range(cols):
        for r in range(1, rows):
            prev = grid[r - 1][c] + shifts[r - 1, c]
            shifts[r, c] = estimate_shift(prev, grid[r][c], layout.rect(r - 1, c), layout.rect(r, c))

    width = layout.width or layout.xs[-1] + layout.size
    height = layout.height or layout.ys[-1] + layout.size
    total = np.zeros((height, width), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int32)
    for r in range(rows):
        for c in range(cols):
            x0, y0, size = layout.rect(r, c)
            total[y0:y0 + size, x0:x0 + size] += grid[r][c] + shifts[r, c]
            count[y0:y0 + size, x0:x0 + size] += 1
    if (count == 0).any():
        raise StitchError("layout leaves pixels uncovered")
    merged = total / count + base_height
    return StitchResult(RasterGrid(merged.astype(np.float32)), shifts, float(base_height))
