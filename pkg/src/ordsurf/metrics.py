"""Height-estimation error metrics: Rel, Rel(log10), RMSE, RMSE(log10), delta1..3.

RMSE uses every pixel. The ratio and log metrics only use pixels where both the
reference and the prediction are at least ``mask_epsilon`` meters; the number of
pixels dropped is reported as ``n_masked``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .raster import RasterGrid

DELTA_BASE = 1.25


@dataclass(frozen=True)
class MetricReport:
    rel: float
    rel_log10: float
    rmse: float
    rmse_log10: float
    delta1: float
    delta2: float
    delta3: float
    n_evaluated: int
    n_masked: int

    def to_json(self, **kwargs) -> str:
        return json.dumps(asdict(self), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        raw = json.loads(text)
        names = [f.name for f in fields(cls)]
        if sorted(raw) != sorted(names):
            raise ValueError(f"metric report keys {sorted(raw)} do not match {names}")
        return cls(**raw)

    def table(self) -> str:
        heads = ["Rel", "Rel(log10)", "RMSE", "RMSE(log10)", "delta1", "delta2", "delta3"]
        vals = [self.rel, self.rel_log10, self.rmse, self.rmse_log10, self.delta1, self.delta2, self.delta3]
        top = " ".join(f"{h:>12}" for h in heads)
        bottom = " ".join(f"{v:>12.3f}" for v in vals)
        return f"{top}\n{bottom}\n(pixels evaluated: {self.n_evaluated}, masked: {self.n_masked})"


def _values(x) -> np.ndarray:
    arr = x.data if isinstance(x, RasterGrid) else np.asarray(x)
    return arr.astype(np.float64).ravel()


def _report(pred: np.ndarray, truth: np.ndarray, mask_epsilon: float, allow_empty: bool) -> MetricReport:
    if pred.shape != truth.shape:
        raise ValueError(f"prediction has {pred.size} pixels, reference has {truth.size}")
    if not (np.isfinite(pred).all() and np.isfinite(truth).all()):
        raise ValueError("prediction and reference must be finite")
    if pred.size == 0:
        raise ValueError("nothing to evaluate")
    diff = pred - truth
    rmse = float(np.sqrt(np.mean(diff * diff)))

    keep = (truth >= mask_epsilon) & (pred >= mask_epsilon)
    n = int(keep.sum())
    if n == 0:
        if allow_empty:
            nan = float("nan")
            return MetricReport(nan, nan, rmse, nan, nan, nan, nan, n_evaluated=0, n_masked=int(pred.size))
        raise ValueError(f"every pixel is below the {mask_epsilon} m mask for ratio metrics")
    p, t = pred[keep], truth[keep]
    lp, lt = np.log10(p), np.log10(t)
    dlog = lp - lt
    rel = float(np.mean(np.abs(p - t) / t))
    # |log10 h| is zero at exactly 1 m; those pixels cannot enter the relative log error
    lt_abs = np.abs(lt)
    ok = lt_abs > 0
    rel_log10 = float(np.mean(np.abs(dlog[ok]) / lt_abs[ok])) if ok.any() else 0.0
    rmse_log10 = float(np.sqrt(np.mean(dlog * dlog)))
    ratio = np.maximum(p / t, t / p)
    deltas = [float(np.mean(ratio < DELTA_BASE ** i)) for i in (1, 2, 3)]
    return MetricReport(rel, rel_log10, rmse, rmse_log10, *deltas, n_evaluated=n, n_masked=int(pred.size - n))


def evaluate(pred, truth, mask_epsilon: float = 0.01, allow_empty: bool = False) -> MetricReport:
    """Metrics for one prediction. With ``allow_empty`` a fully masked input gives NaN
    ratio metrics instead of raising."""
    p, t = _values(pred), _values(truth)
    if np.shape(getattr(pred, "data", pred)) != np.shape(getattr(truth, "data", truth)):
        raise ValueError("prediction and reference dimensions differ")
    return _report(p, t, mask_epsilon, allow_empty)


def evaluate_batch(pairs, mask_epsilon: float = 0.01, allow_empty: bool = False) -> MetricReport:
    """Pixel-pooled metrics over several (pred, truth) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    for pred, truth in pairs:
        if np.shape(getattr(pred, "data", pred)) != np.shape(getattr(truth, "data", truth)):
            raise ValueError("prediction and reference dimensions differ")
    p = np.concatenate([_values(a) for a, _ in pairs])
    t = np.concatenate([_values(b) for _, b in pairs])
    return _report(p, t, mask_epsilon, allow_empty)
