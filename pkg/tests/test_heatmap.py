import numpy as np

from ordsurf.heatmap import (HEIGHT_RAMP, SIGNED_RAMP, diff_heatmap, height_heatmap, ramp_indices,
                             write_heatmap)
from ordsurf.raster import RasterGrid, load_ppm_u8


def test_ramp_endpoints():
    assert HEIGHT_RAMP[0].tolist() == [68, 1, 84] and HEIGHT_RAMP[255].tolist() == [253, 231, 37]
    assert SIGNED_RAMP[0].tolist() == [33, 102, 172] and SIGNED_RAMP[255].tolist() == [178, 24, 43]
    assert HEIGHT_RAMP.shape == (256, 3) and HEIGHT_RAMP.dtype == np.uint8


def test_index_mapping():
    idx = ramp_indices(np.array([0.0, 0.5, 1.0, -3.0, 9.0]), 0.0, 1.0)
    assert idx.tolist() == [0, 128, 255, 0, 255]


def test_constant_raster():
    g = RasterGrid(np.full((3, 4), 7.0))
    rgb = height_heatmap(g)
    assert rgb.shape == (3, 4, 3) and (rgb == HEIGHT_RAMP[0]).all()
    assert (diff_heatmap(g, g) == SIGNED_RAMP[128]).all()


def test_height_ramp_monotone_ordering():
    g = RasterGrid(np.linspace(0, 10, 256).reshape(1, 256))
    rgb = height_heatmap(g)
    luminance = rgb.astype(float) @ [0.299, 0.587, 0.114]
    assert luminance[0, -1] > luminance[0, 0]
    assert np.array_equal(rgb[0], HEIGHT_RAMP)


def test_diff_is_symmetric_and_written(tmp_path):
    truth = RasterGrid(np.zeros((1, 3)))
    pred = RasterGrid(np.array([[-2.0, 0.0, 2.0]]))
    rgb = diff_heatmap(pred, truth)
    assert rgb[0, 0].tolist() == SIGNED_RAMP[0].tolist() and rgb[0, 2].tolist() == SIGNED_RAMP[255].tolist()
    assert rgb[0, 1].tolist() == SIGNED_RAMP[128].tolist()
    write_heatmap(rgb, tmp_path / "d.ppm")
    assert np.array_equal(load_ppm_u8(tmp_path / "d.ppm"), rgb)
