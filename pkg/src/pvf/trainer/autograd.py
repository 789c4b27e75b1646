"""A small reverse-mode autodiff over float64 numpy arrays.

Only the operations the three model families need are provided. Each op
returns a `Var` that remembers its parents and a closure mapping the output
gradient to parent gradients.
"""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_PATTERNS: list | None = None


@contextlib.contextmanager
def record_patterns():
    """Collect the ReLU masks and max-pool choices of the ops built inside
    the block. Finite-difference checks use them to detect steps that
    cross a kink of the piecewise-linear ops."""
    global _PATTERNS
    prev, _PATTERNS = _PATTERNS, []
    try:
        yield _PATTERNS
    finally:
        _PATTERNS = prev


class Var:
    __slots__ = ("value", "grad", "parents", "back")

    def __init__(self, value, parents=(), back=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.back = back

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(out: Var, grad=None) -> None:
    """Accumulate d(out)/d(v) into `.grad` of every Var reachable from `out`."""
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        v, done = stack.pop()
        if done:
            order.append(v)
            continue
        if id(v) in seen:
            continue
        seen.add(id(v))
        stack.append((v, True))
        for p in v.parents:
            if id(p) not in seen:
                stack.append((p, False))
    out.grad = np.ones_like(out.value) if grad is None else np.asarray(grad, dtype=np.float64)
    for v in reversed(order):
        if v.back is None or v.grad is None:
            continue
        for p, g in zip(v.parents, v.back(v.grad)):
            if g is None:
                continue
            p.grad = g if p.grad is None else p.grad + g


def add(a: Var, b: Var) -> Var:
    return Var(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def linear(x: Var, W: Var, b: Var | None = None) -> Var:
    y = x.value @ W.value.T
    if b is not None:
        y = y + b.value

    def back(g):
        xf = x.value.reshape(-1, x.shape[-1])
        gf = g.reshape(-1, g.shape[-1])
        grads = [g @ W.value, gf.T @ xf]
        if b is not None:
            grads.append(gf.sum(axis=0))
        return grads
    return Var(y, (x, W) if b is None else (x, W, b), back)


def relu(x: Var) -> Var:
    mask = x.value > 0
    if _PATTERNS is not None:
        _PATTERNS.append(mask)
    return Var(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def concat(parts: list[Var], axis: int = -1) -> Var:
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts),
               lambda g: tuple(np.split(g, cuts, axis=axis)))


def embedding(table: Var, index: np.ndarray) -> Var:
    index = np.asarray(index)

    def back(g):
        dt = np.zeros_like(table.value)
        np.add.at(dt, index.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (dt,)
    return Var(table.value[index], (table,), back)


def reshape(x: Var, shape) -> Var:
    return Var(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Var, axes) -> Var:
    inv = np.argsort(axes)
    return Var(x.value.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def scale(x: Var, c: float) -> Var:
    return Var(x.value * c, (x,), lambda g: (g * c,))


def bmm(a: Var, b: Var) -> Var:
    """Batched a @ b over leading axes."""
    return Var(a.value @ b.value, (a, b),
               lambda g: (g @ np.swapaxes(b.value, -1, -2), np.swapaxes(a.value, -1, -2) @ g))


def softmax(x: Var) -> Var:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return Var(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def mean(x: Var, axis: int) -> Var:
    n = x.shape[axis]
    return Var(x.value.mean(axis=axis), (x,),
               lambda g: (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,))


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    mu = x.value.mean(axis=-1, keepdims=True)
    d = x.value - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    n = x.shape[-1]

    def back(g):
        gx_hat = g * gamma.value
        dx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return Var(xhat * gamma.value + beta.value, (x, gamma, beta), back)


def attention(q: Var, k: Var, v: Var) -> Var:
    dk = q.shape[-1]
    scores = scale(bmm(q, transpose(k, tuple(range(k.value.ndim - 2)) + (k.value.ndim - 1, k.value.ndim - 2))),
                   1.0 / np.sqrt(dk))
    return bmm(softmax(scores), v)


def conv2d(x: Var, K: Var, b: Var | None = None) -> Var:
    """Valid stride-1 cross-correlation on (B, C, H, W) inputs."""
    co, ci, kh, kw = K.shape
    win = sliding_window_view(x.value, (kh, kw), axis=(2, 3))  # B, C, Ho, Wo, kh, kw
    bsz, _, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, ho, wo, ci * kh * kw)
    kmat = K.value.reshape(co, -1)
    y = cols @ kmat.T
    if b is not None:
        y = y + b.value
    y = y.transpose(0, 3, 1, 2)

    def back(g):
        gy = g.transpose(0, 2, 3, 1)  # B, Ho, Wo, Co
        dk = (gy.reshape(-1, co).T @ cols.reshape(-1, cols.shape[-1])).reshape(K.shape)
        dcols = (gy @ kmat).reshape(bsz, ho, wo, ci, kh, kw)
        dx = np.zeros_like(x.value)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        out = [dx, dk]
        if b is not None:
            out.append(gy.sum(axis=(0, 1, 2)))
        return out
    return Var(y, (x, K) if b is None else (x, K, b), back)


def maxpool2(x: Var) -> Var:
    bsz, c, h, w = x.shape
    win = x.value.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    if _PATTERNS is not None:
        _PATTERNS.append(arg)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(bsz, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        return (dx,)
    return Var(out, (x,), back)


def bce_with_logits(logit: Var, target: np.ndarray) -> Var:
    """Mean binary cross-entropy of sigmoid(logit) against 0/1 targets."""
    z = logit.value.reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    loss = np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z))))
    p = 1.0 / (1.0 + np.exp(-z))
    return Var(loss, (logit,), lambda g: ((g * (p - t) / len(t)).reshape(logit.shape),))


def cross_entropy(logits: Var, target: np.ndarray) -> Var:
    """Mean softmax cross-entropy against integer class targets."""
    z = logits.value
    t = np.asarray(target)
    zs = z - z.max(axis=-1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))
    n = len(t)
    loss = -logp[np.arange(n), t].mean()

    def back(g):
        d = np.exp(logp)
        d[np.arange(n), t] -= 1.0
        return (g * d / n,)
    return Var(loss, (logits,), back)
