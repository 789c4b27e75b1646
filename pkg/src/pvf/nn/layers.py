"""FP32 layer kernels with a fixed accumulation order.

Every reduction is an explicit left-to-right loop, so a given output element is
computed by the same sequence of IEEE operations no matter how many samples
share the call. That makes results bit-reproducible across batch sizes and
worker counts, and lets the naive reference loops in the tests match exactly.

Parameters may be *shared* (their natural shape) or *per-sample* (one extra
leading axis whose length equals the activation's leading axis). The fault
campaign uses per-sample parameters to evaluate many corrupted copies of one
tensor in a single call.
"""
from __future__ import annotations

import functools

import numpy as np

F32 = np.float32


class ShapeError(ValueError):
    pass


def _quiet(fn):
    # overflow to inf and NaN propagation are expected under fault injection
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(all="ignore"):
            return fn(*args, **kwargs)
    return wrapper


def _per_sample(p: np.ndarray, base_ndim: int) -> bool:
    if p.ndim == base_ndim:
        return False
    if p.ndim == base_ndim + 1:
        return True
    raise ShapeError(f"parameter of rank {p.ndim} where rank {base_ndim} (or {base_ndim + 1} per-sample) expected")


def _align(p: np.ndarray, base_ndim: int, lead: int) -> np.ndarray:
    """Reshape a per-sample parameter so its sample axis lines up with axis 0
    of an activation that has `lead` leading axes before the parameter's own."""
    if not _per_sample(p, base_ndim):
        return p
    if lead < 1:
        raise ShapeError("per-sample parameters need a batched activation")
    return p.reshape(p.shape[:1] + (1,) * (lead - 1) + p.shape[1:])


def _check_samples(p: np.ndarray, base_ndim: int, x: np.ndarray):
    if _per_sample(p, base_ndim) and p.shape[0] != x.shape[0]:
        raise ShapeError(f"{p.shape[0]} per-sample parameters for {x.shape[0]} samples")


@_quiet
def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """y_i = (sum_j W_ij x_j) + b_i, summed in increasing j."""
    m, n = W.shape[-2:]
    if x.shape[-1] != n:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight columns {n}")
    _check_samples(W, 2, x)
    if b is not None:
        if b.shape[-1] != m:
            raise ShapeError(f"linear: bias length {b.shape[-1]} != weight rows {m}")
        _check_samples(b, 1, x)
    lead = x.ndim - 1
    wt = _align(np.ascontiguousarray(np.swapaxes(W, -1, -2)), 2, lead)
    y = np.zeros(x.shape[:-1] + (m,), dtype=F32)
    tmp = np.empty_like(y)
    for j in range(n):
        np.multiply(x[..., j, None], wt[..., j, :], out=tmp)
        y += tmp
    if b is not None:
        y += _align(b, 1, lead)
    return y


@_quiet
def relu(x: np.ndarray) -> np.ndarray:
    # np.maximum propagates NaN
    return np.maximum(x, F32(0))


@_quiet
def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=F32)
    return F32(1) / (F32(1) + np.exp(-x))


def sum_last(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis, strictly left to right."""
    acc = np.zeros(x.shape[:-1], dtype=F32)
    for i in range(x.shape[-1]):
        acc += x[..., i]
    return acc


def max_last(x: np.ndarray) -> np.ndarray:
    acc = x[..., 0].copy()
    for i in range(1, x.shape[-1]):
        np.maximum(acc, x[..., i], out=acc)
    return acc


@_quiet
def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    x = np.asarray(x, dtype=F32)
    e = np.exp(x - max_last(x)[..., None])
    return e / sum_last(e)[..., None]


@_quiet
def conv2d(x: np.ndarray, K: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Valid, stride-1 cross-correlation; x is (..., C_in, H, W).

    Each output accumulates over (c_in, row, col) of the kernel in row-major
    order, then adds the bias.
    """
    c_out, c_in, kh, kw = K.shape[-4:]
    if x.ndim < 3 or x.shape[-3] != c_in:
        raise ShapeError(f"conv2d: input {x.shape} does not have {c_in} channels")
    h, w = x.shape[-2:]
    if h < kh or w < kw:
        raise ShapeError(f"conv2d: input {h}x{w} smaller than kernel {kh}x{kw}")
    _check_samples(K, 4, x)
    if b is not None:
        if b.shape[-1] != c_out:
            raise ShapeError("conv2d: bias length != output channels")
        _check_samples(b, 1, x)
    ho, wo = h - kh + 1, w - kw + 1
    lead = x.ndim - 3
    kk = _align(K, 4, lead)
    y = np.zeros(x.shape[:-3] + (c_out, ho, wo), dtype=F32)
    tmp = np.empty_like(y)
    for ci in range(c_in):
        for ki in range(kh):
            for kj in range(kw):
                np.multiply(x[..., ci, None, ki:ki + ho, kj:kj + wo], kk[..., :, ci, ki, kj, None, None], out=tmp)
                y += tmp
    if b is not None:
        y += _align(b, 1, lead)[..., None, None]
    return y


@_quiet
def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 non-overlapping max pooling over the last two axes (NaN-propagating)."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even extents, got {h}x{w}")
    out = np.maximum(x[..., 0::2, 0::2], x[..., 0::2, 1::2])
    np.maximum(out, x[..., 1::2, 0::2], out=out)
    np.maximum(out, x[..., 1::2, 1::2], out=out)
    return out


def embedding_lookup(table: np.ndarray, index) -> np.ndarray:
    """Copy of row `index`. With a per-sample table (B, rows, d), `index` has
    one entry per sample."""
    index = np.asarray(index)
    if not np.issubdtype(index.dtype, np.integer):
        raise ShapeError("embedding index must be integral")
    rows = table.shape[-2]
    if index.size and (index.min() < 0 or index.max() >= rows):
        raise ShapeError(f"embedding index out of range [0, {rows})")
    if table.ndim == 3:
        if index.shape[:1] != table.shape[:1]:
            raise ShapeError("per-sample table needs one index per sample")
        return table[np.arange(table.shape[0]).reshape((-1,) + (1,) * (index.ndim - 1)), index]
    if table.ndim != 2:
        raise ShapeError("embedding table must be (rows, dim)")
    return table[index].copy()


@_quiet
def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    n = x.shape[-1]
    lead = x.ndim - 1
    mean = sum_last(x) / F32(n)
    d = x - mean[..., None]
    var = sum_last(d * d) / F32(n)
    y = d / np.sqrt(var + F32(eps))[..., None]
    return y * _align(gamma, 1, lead) + _align(beta, 1, lead)


@_quiet
def matmul_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out[..., t, s] = sum_i a[..., t, i] * b[..., s, i], in increasing i."""
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError("matmul_nt: inner extents differ")
    out = np.zeros(np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-2]), dtype=F32)
    tmp = np.empty_like(out)
    for i in range(a.shape[-1]):
        np.multiply(a[..., :, i, None], b[..., None, :, i], out=tmp)
        out += tmp
    return out


@_quiet
def matmul_nn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out[..., t, v] = sum_s a[..., t, s] * b[..., s, v], in increasing s."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul_nn: inner extents differ")
    out = np.zeros(np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1]), dtype=F32)
    tmp = np.empty_like(out)
    for s in range(a.shape[-1]):
        np.multiply(a[..., :, s, None], b[..., None, s, :], out=tmp)
        out += tmp
    return out


@_quiet
def attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V with a row-wise softmax."""
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention: incompatible Q{Q.shape} K{K.shape} V{V.shape}")
    scale = F32(np.sqrt(Q.shape[-1]))
    return matmul_nn(softmax(matmul_nt(Q, K) / scale), V)


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Argmax over the last axis, ties resolved to the lowest index."""
    return np.argmax(scores, axis=-1)
