import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordsurf.metrics import MetricReport, evaluate, evaluate_batch
from ordsurf.raster import RasterGrid


def brute_force(pred, truth, eps=0.01):
    """Per-pixel Python loops over plain floats."""
    sq = [(p - t) ** 2 for p, t in zip(pred, truth)]
    kept = [(p, t) for p, t in zip(pred, truth) if p >= eps and t >= eps]
    n = len(kept)
    rel = sum(abs(p - t) / t for p, t in kept) / n
    logs = [(math.log10(p), math.log10(t)) for p, t in kept]
    nz = [(lp, lt) for lp, lt in logs if lt != 0]
    rel_log = sum(abs(lp - lt) / abs(lt) for lp, lt in nz) / len(nz)
    rmse_log = math.sqrt(sum((lp - lt) ** 2 for lp, lt in logs) / n)
    deltas = [sum(max(p / t, t / p) < 1.25 ** i for p, t in kept) / n for i in (1, 2, 3)]
    return [rel, rel_log, math.sqrt(sum(sq) / len(sq)), rmse_log, *deltas]


def as_list(r):
    return [r.rel, r.rel_log10, r.rmse, r.rmse_log10, r.delta1, r.delta2, r.delta3]


def test_worked_example():
    r = evaluate(np.array([4.0]), np.array([2.0]))
    assert r.rel == 1.0 and r.rmse == 2.0
    assert r.delta1 == r.delta2 == r.delta3 == 0.0
    assert r.rmse_log10 == pytest.approx(math.log10(2))


def test_perfect_prediction():
    t = np.array([0.5, 2.0, 10.0])
    r = evaluate(t, t)
    assert as_list(r) == [0, 0, 0, 0, 1, 1, 1]


def test_matches_brute_force(rng):
    truth = rng.lognormal(1.0, 1.0, 10_000)
    truth[:200] = 0.0
    pred = truth * rng.lognormal(0, 0.3, 10_000)
    pred[100:300] = 0.001
    r = evaluate(pred, truth)
    ref = brute_force(pred.tolist(), truth.tolist())
    assert np.allclose(as_list(r), ref, rtol=1e-12, atol=1e-12)
    assert r.n_evaluated + r.n_masked == 10_000 and r.n_masked == 300


def test_rmse_uses_masked_pixels():
    r = evaluate(np.array([0.0, 3.0]), np.array([4.0, 3.0]))
    assert r.rmse == pytest.approx(math.sqrt(8)) and r.n_evaluated == 1


def test_exactly_one_meter_excluded_from_rel_log():
    r = evaluate(np.array([2.0, 20.0]), np.array([1.0, 10.0]))
    assert r.rel_log10 == pytest.approx(math.log10(2) / 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0.1, 100)), min_size=1, max_size=50))
def test_ratio_symmetric_metrics(pairs):
    p, t = np.array(pairs).T
    a, b = evaluate(p, t), evaluate(t, p)
    assert a.rmse == pytest.approx(b.rmse) and a.rmse_log10 == pytest.approx(b.rmse_log10)
    assert (a.delta1, a.delta2, a.delta3) == (b.delta1, b.delta2, b.delta3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0.1, 100)), min_size=1, max_size=50),
       st.sampled_from([2.0, 4.0, 0.5]))
def test_scale_invariance(pairs, k):
    p, t = np.array(pairs).T
    a, b = evaluate(p, t, mask_epsilon=1e-3), evaluate(k * p, k * t, mask_epsilon=1e-3)
    assert a.rel == pytest.approx(b.rel, rel=1e-12)
    assert b.rmse == pytest.approx(k * a.rmse, rel=1e-12)
    assert (a.delta1, a.delta2, a.delta3) == (b.delta1, b.delta2, b.delta3)


def test_batch_pools_pixels(rng):
    pairs = [(rng.uniform(0.1, 5, 7), rng.uniform(0.1, 5, 7)), (rng.uniform(0.1, 5, 13), rng.uniform(0.1, 5, 13))]
    pooled = evaluate(np.concatenate([p for p, _ in pairs]), np.concatenate([t for _, t in pairs]))
    assert as_list(evaluate_batch(pairs)) == as_list(pooled)


def test_rasters_accepted():
    g = RasterGrid(np.full((3, 3), 2.0))
    assert evaluate(g, g).rmse == 0.0


def test_errors():
    with pytest.raises(ValueError):
        evaluate(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        evaluate(np.array([np.nan]), np.array([1.0]))
    with pytest.raises(ValueError):
        evaluate(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        evaluate_batch([])
    r = evaluate(np.zeros(3), np.ones(3), allow_empty=True)
    assert r.rmse == 1.0 and math.isnan(r.rel) and r.n_evaluated == 0


def test_json_roundtrip():
    r = evaluate(np.array([1.5, 3.0]), np.array([2.0, 2.5]))
    assert MetricReport.from_json(r.to_json()) == r
    with pytest.raises(ValueError):
        MetricReport.from_json('{"rel": 1.0}')
    assert "RMSE" in r.table()
