"""A small dense-tensor reverse-mode autodiff engine over numpy arrays.

Only the operations the height network needs are provided: 2-D convolution
with stride/dilation/padding, ReLU, residual add, channel concat, parameter-free
instance standardization and fixed-factor bilinear upsampling. Every op keeps the
input dtype, so the same graph runs at float32 for training and float64 for
gradient checks.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


class Tensor:
    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None,
                 name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        g = g.astype(self.data.dtype, copy=False)
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self, grad=None):
        """Propagate ``grad`` (default ones) to every ancestor with ``requires_grad``.

        Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ValueError(f"upstream gradient shape {grad.shape} != {self.data.shape}")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _result(data, parents, backward_fn):
    if _needs_grad(*parents):
        return Tensor(data, True, tuple(parents), backward_fn)
    return Tensor(data)


def conv_output_size(n: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (n + 2 * padding - ((k - 1) * dilation + 1)) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N, C, H, W) input with (O, C, k, k) weights."""
    n, c, h, wd = x.shape
    o, cw, k, k2 = w.shape
    if cw != c or k != k2:
        raise ValueError(f"conv weight {w.shape} incompatible with input {x.shape}")
    ho = conv_output_size(h, k, stride, dilation, padding)
    wo = conv_output_size(wd, k, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv produces an empty output for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            win = xp[:, :, i * dilation:i * dilation + span_h:stride, j * dilation:j * dilation + span_w:stride]
            cols[:, i, j] = win.transpose(1, 0, 2, 3)
    cols2 = cols.reshape(c * k * k, n * ho * wo)
    w2 = w.data.reshape(o, c * k * k)
    out = (w2 @ cols2).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gw = (g2 @ cols2.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k, k, n, ho, wo)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i * dilation:i * dilation + span_h:stride,
                        j * dilation:j * dilation + span_w:stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _result(out, parents, backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward_fn(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return _result(out, tensors, backward_fn)


def instance_standardize(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel zero mean / unit variance over the spatial axes."""
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (xc * inv).astype(x.dtype)

    def backward_fn(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gym = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _result(y, (x,), backward_fn)


@lru_cache(maxsize=64)
def upsample_matrix(n_in: int, scale: int, dtype_str: str) -> np.ndarray:
    """(n_in*scale, n_in) linear interpolation matrix, half-pixel (align_corners=False) convention.

    Output index i samples source coordinate ``(i + 0.5) / scale - 0.5``, clamped
    below at 0; the two nearest source samples are blended linearly and the upper
    neighbour is clamped at ``n_in - 1``.
    """
    n_out = n_in * scale
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        src = max((i + 0.5) / scale - 0.5, 0.0)
        i0 = int(np.floor(src))
        frac = src - i0
        i1 = min(i0 + 1, n_in - 1)
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m = m.astype(dtype_str)
    m.setflags(write=False)
    return m


def upsample_bilinear(x: Tensor, scale: int) -> Tensor:
    n, c, h, w = x.shape
    uh = upsample_matrix(h, scale, x.dtype.str)
    uw = upsample_matrix(w, scale, x.dtype.str)
    out = uh @ (x.data @ uw.T)

    def backward_fn(g):
        return (uh.T @ (g @ uw),)

    return _result(out, (x,), backward_fn)
