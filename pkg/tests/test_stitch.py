import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordsurf.raster import PatchLayout, RasterGrid, localize_patch, plan_grid
from ordsurf.stitch import StitchError, estimate_shift, shared_region, stitch


def localized_patches(truth, layout):
    grid = RasterGrid(truth.astype(np.float32))
    return [localize_patch(grid, x0, y0, s)[0].data for _, _, x0, y0, s in layout.rects]


def test_shared_region():
    sa, sb = shared_region((0, 0, 4), (2, 0, 4))
    assert sa == (slice(0, 4), slice(2, 4)) and sb == (slice(0, 4), slice(0, 2))
    assert shared_region((0, 0, 2), (5, 5, 2)) is None


def test_estimate_shift_example():
    a = np.array([[1.0, 2.0, 3.0]] * 3)
    b = np.array([[0.0, 1.0, 9.0]] * 3)
    # overlap is a's last column (3.0) against b's first column (0.0) when b sits 2 px right
    assert estimate_shift(a, b, (0, 0, 3), (2, 0, 3)) == 3.0
    with pytest.raises(StitchError):
        estimate_shift(a, b, (0, 0, 3), (5, 0, 3))


def test_two_patch_example():
    truth = np.tile(np.arange(6, dtype=np.float64), (4, 1)) + 10
    layout = plan_grid(6, 4, 4, 2)
    assert layout.xs == (0, 2)
    res = stitch(localized_patches(truth, layout), layout)
    assert np.allclose(res.raster.data, truth - 10)
    assert res.shifts.tolist() == [[0.0, 2.0]]


def test_reconstruction_3x3(rng):
    truth = rng.uniform(0, 40, (40, 40))
    layout = plan_grid(40, 40, 16, 4)
    assert (layout.rows, layout.cols) == (3, 3)
    res = stitch(localized_patches(truth, layout), layout)
    dev = res.raster.data.astype(np.float64) - truth
    assert np.ptp(dev) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(-100, 100), min_size=9, max_size=9))
def test_per_patch_offsets_do_not_matter(seed, offsets):
    truth = np.random.default_rng(seed).uniform(0, 20, (36, 36))
    layout = plan_grid(36, 36, 16, 6)
    patches = localized_patches(truth, layout)
    moved = [p.astype(np.float64) + o for p, o in zip(patches, offsets[:len(patches)])]
    a = stitch(patches, layout).raster.data.astype(np.float64)
    b = stitch(moved, layout).raster.data.astype(np.float64)
    assert np.ptp(a - b) < 1e-4
    assert np.ptp(a - truth) < 1e-4


def test_base_height_and_nested_input():
    truth = np.arange(36, dtype=np.float64).reshape(6, 6)
    layout = plan_grid(6, 6, 4, 2)
    flat = localized_patches(truth, layout)
    nested = [flat[r * layout.cols:(r + 1) * layout.cols] for r in range(layout.rows)]
    res = stitch(nested, layout, base_height=truth.min())
    assert np.allclose(res.raster.data, truth)


def test_single_patch_passthrough():
    layout = plan_grid(4, 4, 4, 2)
    p = np.arange(16, dtype=np.float32).reshape(4, 4)
    assert np.array_equal(stitch([p], layout).raster.data, p)


def test_stitch_errors():
    layout = plan_grid(6, 6, 4, 2)
    with pytest.raises(StitchError):
        stitch([np.zeros((4, 4))] * 3, layout)
    with pytest.raises(StitchError):
        stitch([np.zeros((5, 5))] * 4, layout)
    gap = PatchLayout(xs=(0, 5), ys=(0,), size=4, overlap=0, width=9, height=4)
    with pytest.raises(StitchError):
        stitch([np.zeros((4, 4))] * 2, gap)


def test_shift_report(tmp_path):
    truth = np.arange(36, dtype=np.float64).reshape(6, 6)
    layout = plan_grid(6, 6, 4, 2)
    res = stitch(localized_patches(truth, layout), layout)
    res.write_shift_report(layout, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "row,col,x0,y0,shift" and len(lines) == 5
    assert lines[1] == "0,0,0,0,0.0"
