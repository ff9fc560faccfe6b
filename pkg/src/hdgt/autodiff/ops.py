"""Differentiable primitives.

Each op computes its forward value with numpy and registers a closure that
maps the output cotangent to one cotangent per parent.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(a, like: Tensor | None = None) -> Tensor:
    if isinstance(a, Tensor):
        return a
    dtype = like.dtype if like is not None else None
    return as_tensor(a, dtype=dtype)


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        c = float(b)
        return make_result(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at 0 is taken as 0."""
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,))


def smooth_l1(a, b) -> Tensor:
    """Elementwise 0.5 d^2 if |d| < 1 else |d| - 0.5, with d = a - b."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    d = a.data - b.data
    small = np.abs(d) < 1
    val = np.where(small, 0.5 * d * d, np.abs(d) - 0.5).astype(d.dtype)
    dd = np.where(small, d, np.sign(d)).astype(d.dtype)
    sa, sb = a.shape, b.shape
    return make_result(val, (a, b),
                       lambda g: (_unbroadcast(g * dd, sa), _unbroadcast(-g * dd, sb)))


# -- shape ------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [_lift(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return make_result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                       lambda g: tuple(np.split(g, splits, axis=axis)))


def index(x: Tensor, idx) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in the backward pass."""
    shape, dtype = x.shape, x.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return make_result(x.data[idx], (x,), backward)


def take(x: Tensor, rows) -> Tensor:
    """Gather rows along axis 0."""
    rows = np.asarray(rows, dtype=np.int64)
    n, dtype = x.shape[0], x.dtype

    def backward(g):
        flat = g.reshape(len(rows), -1)
        out = np.zeros((n, flat.shape[1]), dtype=dtype)
        np.add.at(out, rows, flat)
        return (out.reshape((n,) + g.shape[1:]),)

    return make_result(x.data[rows], (x,), backward)


def scatter_rows(parts, rows_list, n: int) -> Tensor:
    """Inverse of ``take`` for disjoint row sets: out[rows_list[i]] = parts[i]."""
    parts = list(parts)
    width = parts[0].shape[1:]
    out = np.zeros((n,) + width, dtype=parts[0].dtype)
    for p, r in zip(parts, rows_list):
        out[r] = p.data
    rows_list = [np.asarray(r, dtype=np.int64) for r in rows_list]
    return make_result(out, tuple(parts), lambda g: tuple(g[r] for r in rows_list))


# -- reductions ---------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / float(n))


def max_pool_over_set(x: Tensor, axis: int = 0) -> Tensor:
    """Max over ``axis``; the gradient goes to the first maximising element."""
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis)
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_result(np.squeeze(out, axis=axis), (x,), backward)


def mean_pool_over_time(x: Tensor, axis: int = -2) -> Tensor:
    return mean(x, axis=axis)


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if ad.ndim > 2 and bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result(ad @ bd, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b with a fused backward."""
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)


# -- normalisation / attention ------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return make_result(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data
    h = xd.shape[-1]

    def backward(g):
        g2 = g.reshape(-1, h)
        dgamma = (g2 * xhat.reshape(-1, h)).sum(axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return make_result(out.astype(xd.dtype), (x, gamma, beta), backward)


def segment_sum(x: Tensor, seg, n: int) -> Tensor:
    """out[s] = sum of rows of ``x`` whose segment id is ``s``; empty segments are 0."""
    seg = np.asarray(seg, dtype=np.int64)
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, seg, x.data)
    return make_result(out, (x,), lambda g: (g[seg],))


def _segment_softmax_np(s: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    m = np.full((n,) + s.shape[1:], -np.inf, dtype=s.dtype)
    np.maximum.at(m, seg, s)
    e = np.exp(s - m[seg])
    z = np.zeros((n,) + s.shape[1:], dtype=s.dtype)
    np.add.at(z, seg, e)
    return e / z[seg]


def segment_softmax(x: Tensor, seg, n: int) -> Tensor:
    """Softmax over rows sharing a segment id (independently per trailing column)."""
    seg = np.asarray(seg, dtype=np.int64)
    y = _segment_softmax_np(x.data, seg, n)

    def backward(g):
        gy = g * y
        acc = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(acc, seg, gy)
        return (gy - y * acc[seg],)

    return make_result(y, (x,), backward)


def segment_attention(q: Tensor, k: Tensor, v: Tensor, seg, n: int, n_heads: int,
                      return_weights: bool = False):
    """Fused multi-head scaled dot-product attention over variable-size key sets.

    Row ``e`` of ``q``/``k``/``v`` is one (query, key, value) triple whose
    query belongs to segment ``seg[e]``; attention weights are normalised per
    segment and head.  Returns (n, h) head-concatenated outputs (segments with
    no rows get zeros) before the output projection.
    """
    seg = np.asarray(seg, dtype=np.int64)
    e_count, h = k.shape
    if h % n_heads:
        raise ValueError(f"hidden size {h} not divisible by {n_heads} heads")
    d = h // n_heads
    scale = 1.0 / math.sqrt(d)
    qd = q.data.reshape(e_count, n_heads, d)
    kd = k.data.reshape(e_count, n_heads, d)
    vd = v.data.reshape(e_count, n_heads, d)
    scores = (qd * kd).sum(axis=-1) * scale
    alpha = _segment_softmax_np(scores, seg, n).astype(k.dtype)
    msg = alpha[:, :, None] * vd
    out = np.zeros((n, n_heads, d), dtype=k.dtype)
    np.add.at(out, seg, msg)

    def backward(g):
        ge = g.reshape(n, n_heads, d)[seg]
        gv = alpha[:, :, None] * ge
        galpha = (ge * vd).sum(axis=-1)
        ga = galpha * alpha
        acc = np.zeros((n, n_heads), dtype=g.dtype)
        np.add.at(acc, seg, ga)
        gs = (ga - alpha * acc[seg]) * scale
        gq = gs[:, :, None] * kd
        gk = gs[:, :, None] * qd
        return gq.reshape(e_count, h), gk.reshape(e_count, h), gv.reshape(e_count, h)

    result = make_result(out.reshape(n, h), (q, k, v), backward)
    if return_weights:
        return result, alpha
    return result


def multi_head_attention(queries: Tensor, keys: Tensor, values: Tensor, params, n_heads: int,
                         return_weights: bool = False):
    """Dense MHA: per head softmax(Q K^T / sqrt(d)) V, concatenated, then @ W_o.

    ``params`` maps ``wq``, ``wk``, ``wv``, ``wo`` to (h, h) tensors.
    """
    nq, h = queries.shape
    nk = keys.shape[0]
    if h % n_heads:
        raise ValueError(f"hidden size {h} not divisible by {n_heads} heads")
    d = h // n_heads
    q = transpose(reshape(matmul(queries, params["wq"]), (nq, n_heads, d)), (1, 0, 2))
    k = transpose(reshape(matmul(keys, params["wk"]), (nk, n_heads, d)), (1, 2, 0))
    v = transpose(reshape(matmul(values, params["wv"]), (nk, n_heads, d)), (1, 0, 2))
    weights = softmax(mul(matmul(q, k), 1.0 / math.sqrt(d)), axis=-1)
    heads = matmul(weights, v)
    out = matmul(reshape(transpose(heads, (1, 0, 2)), (nq, h)), params["wo"])
    if return_weights:
        return out, weights.data
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """1D convolution over axis 1 of (B, L, C_in) with kernels (k, C_in, C_out)."""
    xd = x.data
    bsz, length, cin = xd.shape
    k, _, cout = w.shape
    xp = np.pad(xd, ((0, 0), (padding, padding), (0, 0))) if padding else xd
    lp = xp.shape[1]
    lout = (lp - k) // stride + 1
    if lout < 1:
        raise ValueError(f"sequence of length {length} too short for kernel {k}")
    idx = np.arange(lout)[:, None] * stride + np.arange(k)[None, :]
    cols = xp[:, idx, :].reshape(bsz * lout, k * cin)
    wd = w.data.reshape(k * cin, cout)
    out = (cols @ wd).reshape(bsz, lout, cout)
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(bsz * lout, cout)
        gw = (cols.T @ g2).reshape(k, cin, cout)
        gcols = (g2 @ wd.T).reshape(bsz, lout, k, cin)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, idx[:, j], :] += gcols[:, :, j, :]
        gx = gxp[:, padding:padding + length, :] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward)
