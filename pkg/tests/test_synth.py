import numpy as np
import pytest
from scipy import stats

from ordsurf.prng import SplitMix64
from ordsurf.synth import (SHADOW_FACTOR, Building, SceneConfig, generate_dataset, generate_pairs, generate_tile,
                           load_dataset, place_buildings, read_manifest, render_scene, roof_brightness, sample_height,
                           shadow_mask)


def test_empty_scene_is_ground_only():
    cfg = SceneConfig(tile_size=64, ground_texture_amp=0.0)
    image, dsm, shade = render_scene(cfg, [], SplitMix64(0))
    assert not dsm.data.any() and not shade.any()
    assert image.data.shape == (64, 64, 3)


def test_shadow_length_east_sun():
    cfg = SceneConfig(tile_size=64, sun_azimuth=90.0, shadow_px_per_meter=1.0)
    b = Building(10, 20, 8, 6, 10.0)
    mask = shadow_mask(b, cfg)
    ys, xs = np.nonzero(mask)
    assert xs.min() == 18 and xs.max() == 27          # exactly 10 px past the footprint edge
    assert ys.min() == 20 and ys.max() == 25


def test_shadow_north_sun_goes_up():
    cfg = SceneConfig(tile_size=64, sun_azimuth=0.0)
    ys, xs = np.nonzero(shadow_mask(Building(10, 30, 5, 5, 4.0), cfg))
    assert ys.min() == 26 and ys.max() == 29 and set(xs) == set(range(10, 15))


def test_shadow_darkens_ground():
    cfg = SceneConfig(tile_size=48, ground_texture_amp=0.0)
    b = Building(10, 10, 10, 10, 8.0)
    image, dsm, shade = render_scene(cfg, [b], SplitMix64(3))
    lit = image.data[~shade & (dsm.data == 0)].mean()
    dark = image.data[shade].mean()
    assert dark == pytest.approx(lit * SHADOW_FACTOR, rel=0.1)


def test_roof_height_on_top_of_ground():
    cfg = SceneConfig(tile_size=48)
    b = Building(5, 5, 10, 10, 7.0)
    _, dsm, _ = render_scene(cfg, [b], SplitMix64(1))
    roof = dsm.data[5:15, 5:15]
    assert np.ptp(roof) == 0
    ground = np.delete(dsm.data.ravel(), np.ravel_multi_index(np.mgrid[5:15, 5:15].reshape(2, -1), (48, 48)))
    assert roof[0, 0] - 7.0 <= ground.max() + 1e-6
    assert roof[0, 0] >= 7.0


def test_placements_do_not_overlap():
    cfg = SceneConfig(tile_size=160, n_buildings=(8, 8), min_gap_px=3)
    bs = place_buildings(cfg, SplitMix64(7))
    for i, a in enumerate(bs):
        assert 0 <= a.x0 and a.x0 + a.w <= 160 and 0 <= a.y0 and a.y0 + a.h <= 160
        for b in bs[i + 1:]:
            assert not a.overlaps(b, 3)


def test_tiles_deterministic_and_order_free():
    cfg = SceneConfig(tile_size=64)
    a = generate_pairs(cfg, 3)
    b = generate_tile(cfg, 2)
    assert np.array_equal(a[2][0].data, b[0].data) and np.array_equal(a[2][1].data, b[1].data)
    c = generate_tile(SceneConfig(tile_size=64, seed=1), 2)
    assert not np.array_equal(b[1].data, c[1].data)


def test_height_distribution_right_skewed():
    cfg = SceneConfig()
    rng = SplitMix64(11)
    h = np.array([sample_height(cfg, rng) for _ in range(5000)])
    assert stats.skew(h) > 0
    assert h.max() <= cfg.max_height and h.min() > 0
    assert np.median(h) == pytest.approx(6.0, rel=0.1)


def test_roof_brightness_tracks_height():
    assert np.all(np.diff(roof_brightness(np.linspace(0, 40, 50))) > 0)
    cfg = SceneConfig(tile_size=128)
    heights, grey = [], []
    for i in range(10):
        rng = SplitMix64(cfg.seed).split(i)
        bs = place_buildings(cfg, rng)
        image, _, _ = render_scene(cfg, bs, rng)
        for b in bs:
            heights.append(b.height)
            grey.append(image.data[b.y0:b.y0 + b.h, b.x0:b.x0 + b.w].mean())
    assert stats.pearsonr(heights, grey)[0] > 0.5


def test_dataset_on_disk(tmp_path):
    cfg = SceneConfig(tile_size=32, n_buildings=(1, 2), footprint_px=(4, 8))
    manifest = generate_dataset(cfg, 3, tmp_path)
    rows = read_manifest(manifest)
    assert [r["image"] for r in rows] == ["tile_00000.ppm", "tile_00001.ppm", "tile_00002.ppm"]
    pairs = load_dataset(manifest)
    mem = generate_pairs(cfg, 3)
    for (img, dsm), (mimg, mdsm), row in zip(pairs, mem, rows):
        assert np.array_equal(dsm.data, mdsm.data)
        assert np.array_equal(img.data, mimg.data)
        assert float(row["max_height"]) == float(dsm.data.max())


def test_bad_scene_config():
    with pytest.raises(ValueError):
        SceneConfig(n_buildings=(3, 1))
    with pytest.raises(ValueError):
        SceneConfig(footprint_px=(0, 4))
