"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel takes C-contiguous 2-D (or 1-D for GELU) float32/float64 arrays
and is a pure function. The numba variants use plain sequential loops
(fastmath off), so both backends are IEEE-compliant and deterministic; they
may differ from numpy's pairwise summation by a few ulps, never more.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend as _backend

# tanh-approximation GELU constants
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _layer_norm_fwd_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = np.square(x - mu).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, xhat, inv[:, 0]


def _layer_norm_bwd_np(dy, xhat, inv, gain):
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = inv[:, None] * (dxhat - m1 - xhat * m2)
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    return dx, dgain, dbias


def _masked_softmax_fwd_np(scores, mask):
    neg = np.array(-np.inf, dtype=scores.dtype)
    shifted = np.where(mask != 0, scores, neg)
    rowmax = shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted - rowmax)  # exp(-inf) == 0 at masked slots
    return e / e.sum(axis=1, keepdims=True)


def _masked_softmax_bwd_np(dp, p):
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner)


def _gelu_fwd_np(x):
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * x * (1.0 + t)


def _gelu_bwd_np(x, dy):
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


_NUMPY = {
    "layer_norm_fwd": _layer_norm_fwd_np,
    "layer_norm_bwd": _layer_norm_bwd_np,
    "masked_softmax_fwd": _masked_softmax_fwd_np,
    "masked_softmax_bwd": _masked_softmax_bwd_np,
    "gelu_fwd": _gelu_fwd_np,
    "gelu_bwd": _gelu_bwd_np,
}

# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _backend.HAS_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _layer_norm_fwd_nb(x, gain, bias, eps):
        rows, h = x.shape
        out = np.empty_like(x)
        xhat = np.empty_like(x)
        inv = np.empty(rows, dtype=x.dtype)
        for r in range(rows):
            mu = 0.0
            for j in range(h):
                mu += x[r, j]
            mu /= h
            var = 0.0
            for j in range(h):
                d = x[r, j] - mu
                var += d * d
            var /= h
            s = 1.0 / math.sqrt(var + eps)
            inv[r] = s
            for j in range(h):
                xh = (x[r, j] - mu) * s
                xhat[r, j] = xh
                out[r, j] = xh * gain[j] + bias[j]
        return out, xhat, inv

    @njit(cache=True)
    def _layer_norm_bwd_nb(dy, xhat, inv, gain):
        rows, h = dy.shape
        dx = np.empty_like(dy)
        dgain = np.zeros(h, dtype=dy.dtype)
        dbias = np.zeros(h, dtype=dy.dtype)
        for r in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(h):
                dxh = dy[r, j] * gain[j]
                m1 += dxh
                m2 += dxh * xhat[r, j]
            m1 /= h
            m2 /= h
            for j in range(h):
                dxh = dy[r, j] * gain[j]
                dx[r, j] = inv[r] * (dxh - m1 - xhat[r, j] * m2)
                dgain[j] += dy[r, j] * xhat[r, j]
                dbias[j] += dy[r, j]
        return dx, dgain, dbias

    @njit(cache=True)
    def _masked_softmax_fwd_nb(scores, mask):
        rows, n = scores.shape
        p = np.zeros_like(scores)
        for r in range(rows):
            rowmax = -np.inf
            for j in range(n):
                if mask[r, j] != 0 and scores[r, j] > rowmax:
                    rowmax = scores[r, j]
            denom = 0.0
            for j in range(n):
                if mask[r, j] != 0:
                    e = math.exp(scores[r, j] - rowmax)
                    p[r, j] = e
                    denom += e
            for j in range(n):
                p[r, j] /= denom
        return p

    @njit(cache=True)
    def _masked_softmax_bwd_nb(dp, p):
        rows, n = dp.shape
        ds = np.empty_like(dp)
        for r in range(rows):
            inner = 0.0
            for j in range(n):
                inner += dp[r, j] * p[r, j]
            for j in range(n):
                ds[r, j] = p[r, j] * (dp[r, j] - inner)
        return ds

    @njit(cache=True)
    def _gelu_fwd_nb(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            v = x[i]
            t = math.tanh(_GELU_C * (v + _GELU_A * v * v * v))
            out[i] = 0.5 * v * (1.0 + t)
        return out

    @njit(cache=True)
    def _gelu_bwd_nb(x, dy):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            v = x[i]
            t = math.tanh(_GELU_C * (v + _GELU_A * v * v * v))
            dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
            out[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt)
        return out

    _NUMBA = {
        "layer_norm_fwd": _layer_norm_fwd_nb,
        "layer_norm_bwd": _layer_norm_bwd_nb,
        "masked_softmax_fwd": _masked_softmax_fwd_nb,
        "masked_softmax_bwd": _masked_softmax_bwd_nb,
        "gelu_fwd": _gelu_fwd_nb,
        "gelu_bwd": _gelu_bwd_nb,
    }
else:
    _NUMBA = _NUMPY


def _impl(name):
    table = _NUMBA if _backend.active_backend() == "numba" else _NUMPY
    return table[name]


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm over the last axis of a (rows, h) array.

    Returns (out, xhat, inv_std); the latter two are the backward cache.
    """
    return _impl("layer_norm_fwd")(x, gain, bias, eps)


def layer_norm_bwd(dy, xhat, inv, gain):
    return _impl("layer_norm_bwd")(dy, xhat, inv, gain)


def masked_softmax_fwd(scores, mask):
    """Softmax per row over positions where mask != 0; zeros elsewhere.

    Every row must have at least one unmasked position (callers guarantee
    this: the CLS token is never padding).
    """
    return _impl("masked_softmax_fwd")(scores, mask)


def masked_softmax_bwd(dp, p):
    return _impl("masked_softmax_bwd")(dp, p)


def gelu_fwd(x):
    """tanh-approximation GELU on a 1-D array."""
    return _impl("gelu_fwd")(x)


def gelu_bwd(x, dy):
    return _impl("gelu_bwd")(x, dy)
