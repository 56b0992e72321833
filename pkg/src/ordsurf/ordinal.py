"""Ordinal head: paired softmax, ordinal NLL with its analytic gradient, decoding,
and the MCC / MSE ablation losses.

Array conventions: logits are (N, C, H, W) with channels ``2k`` and ``2k+1``
forming the pair for threshold ``k``; class maps are integer (N, H, W).
Losses are means over all N*H*W pixels.
"""

from __future__ import annotations

import numpy as np

LOG_FLOOR = -30.0


def _check_logits(logits: np.ndarray, channels_per_class: int) -> int:
    if logits.ndim != 4:
        raise ValueError(f"logits must be (N, C, H, W), got shape {logits.shape}")
    if logits.shape[1] % channels_per_class:
        raise ValueError(f"channel count {logits.shape[1]} is not a multiple of {channels_per_class}")
    if np.isnan(logits).any():
        raise ValueError("NaN in logits")
    return logits.shape[1] // channels_per_class


def _check_classes(classes: np.ndarray, shape, K: int) -> np.ndarray:
    classes = np.asarray(classes)
    n, _, h, w = shape
    if classes.shape != (n, h, w):
        raise ValueError(f"class map shape {classes.shape} does not match logits {shape}")
    if classes.size and (classes.min() < 0 or classes.max() >= K):
        raise ValueError(f"class index outside [0, {K - 1}]")
    return classes.astype(np.int64)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so nothing overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def pair_softmax(logits: np.ndarray) -> np.ndarray:
    """P^k = exp(Y_{2k+1}) / (exp(Y_{2k}) + exp(Y_{2k+1})), shape (N, K, H, W)."""
    _check_logits(logits, 2)
    return _sigmoid(logits[:, 1::2] - logits[:, 0::2])


def target_bits(classes: np.ndarray, K: int) -> np.ndarray:
    """b[n, k, h, w] = 1 where k < C(n, h, w)."""
    ks = np.arange(K).reshape(1, K, 1, 1)
    return (ks < classes[:, None]).astype(np.float64)


def ordinal_nll(probs: np.ndarray, classes: np.ndarray) -> float:
    """Negated ordinal log-likelihood averaged over pixels; log terms floored at -30."""
    if probs.ndim != 4:
        raise ValueError(f"probabilities must be (N, K, H, W), got shape {probs.shape}")
    K = probs.shape[1]
    classes = _check_classes(classes, probs.shape, K)
    bits = target_bits(classes, K)
    p = probs.astype(np.float64)
    with np.errstate(divide="ignore"):
        log_p = np.maximum(np.log(p), LOG_FLOOR)
        log_q = np.maximum(np.log1p(-p), LOG_FLOOR)
    ll = bits * log_p + (1.0 - bits) * log_q
    n_pix = classes.size
    return float(-ll.sum() / n_pix)


def ordinal_nll_from_logits(logits: np.ndarray, classes: np.ndarray) -> float:
    """Same loss as ``ordinal_nll(pair_softmax(logits), classes)``, evaluated in log space."""
    K = _check_logits(logits, 2)
    classes = _check_classes(classes, logits.shape, K)
    z = logits[:, 1::2].astype(np.float64) - logits[:, 0::2]
    bits = target_bits(classes, K)
    log_p = np.maximum(_log_sigmoid(z), LOG_FLOOR)
    log_q = np.maximum(_log_sigmoid(-z), LOG_FLOOR)
    return float(-(bits * log_p + (1.0 - bits) * log_q).sum() / classes.size)


def ordinal_nll_grad(logits: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """d loss / d logits. Per pair: odd channel gets (P - b)/M, even channel (b - P)/M."""
    K = _check_logits(logits, 2)
    classes = _check_classes(classes, logits.shape, K)
    s = _sigmoid(logits[:, 1::2].astype(np.float64) - logits[:, 0::2])
    g = (s - target_bits(classes, K)) / classes.size
    out = np.empty(logits.shape, dtype=np.float64)
    out[:, 1::2] = g
    out[:, 0::2] = -g
    return out


def decode_class(probs: np.ndarray) -> np.ndarray:
    """Predicted class: number of thresholds with P^k > 0.5, clamped to K-1."""
    K = probs.shape[1]
    return np.minimum((probs > 0.5).sum(axis=1), K - 1).astype(np.int64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    x = logits.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def mcc_loss(logits: np.ndarray, classes: np.ndarray) -> float:
    """Mean softmax cross-entropy over K channels."""
    K = _check_logits(logits, 1)
    classes = _check_classes(classes, logits.shape, K)
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, classes[:, None], axis=1)
    return float(-picked.sum() / classes.size)


def mcc_grad(logits: np.ndarray, classes: np.ndarray) -> np.ndarray:
    K = _check_logits(logits, 1)
    classes = _check_classes(classes, logits.shape, K)
    g = np.exp(_log_softmax(logits))
    onehot = np.arange(K).reshape(1, K, 1, 1) == classes[:, None]
    return (g - onehot) / classes.size


def mcc_decode(logits: np.ndarray) -> np.ndarray:
    return logits.argmax(axis=1).astype(np.int64)


def mse_loss(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(((pred - truth) ** 2).sum() / pred.size)


def mse_grad(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return 2.0 * (pred - truth) / pred.size
