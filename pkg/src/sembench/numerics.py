"""Minimal tensor arithmetic with seeded randomness and dual precision modes.

Tensors are plain numpy arrays; the precision mode is carried by the dtype:

    check64  float64   reference mode for gradient checking
    train32  float32   normal training mode
    emu16    float16   emulated IEEE 754 binary16 *storage*

emu16 arrays store every value rounded through binary16 (so magnitudes below
the binary16 subnormal range flush to zero), but all arithmetic on them runs
in float32 and the result is rounded back. Binary ops return the minimum
precision of their inputs.

Randomness: all seeded operations use numpy's PCG64 via
``np.random.default_rng(seed)``. Derived seeds (per step, per layer, per
sublayer) come from a splitmix64 chain (`derive_seed`), so checkpointed runs
replay exactly on any platform.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError

CHECK64 = "check64"
TRAIN32 = "train32"
EMU16 = "emu16"

_PRECISIONS = (EMU16, TRAIN32, CHECK64)  # ascending width
_DTYPE_OF = {CHECK64: np.float64, TRAIN32: np.float32, EMU16: np.float16}
_PRECISION_OF = {np.dtype(np.float64): CHECK64,
                 np.dtype(np.float32): TRAIN32,
                 np.dtype(np.float16): EMU16}

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 scramble step (public-domain mixing constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(*parts: int) -> int:
    """Fold integer parts into one 64-bit seed, order-sensitively."""
    state = 0x8557F21A6D4C1B37
    for part in parts:
        state = splitmix64(state ^ (int(part) & _MASK64))
    return state


def dtype_of(precision: str) -> np.dtype:
    try:
        return np.dtype(_DTYPE_OF[precision])
    except KeyError:
        raise DomainError(f"unknown precision {precision!r}") from None


def precision_of(arr: np.ndarray) -> str:
    try:
        return _PRECISION_OF[arr.dtype]
    except KeyError:
        raise DomainError(f"array dtype {arr.dtype} has no precision mode") from None


def min_precision(a: str, b: str) -> str:
    return a if _PRECISIONS.index(a) <= _PRECISIONS.index(b) else b


def to_precision(arr: np.ndarray, precision: str) -> np.ndarray:
    return np.asarray(arr, dtype=dtype_of(precision))


def emu16_round(arr: np.ndarray) -> np.ndarray:
    """Round every value through binary16, keeping the array's dtype.

    Values outside the binary16 range become inf, exactly as they would on
    f16 hardware; the loss scaler relies on that to detect overflow.
    """
    with np.errstate(over="ignore"):
        return arr.astype(np.float16).astype(arr.dtype)


def _compute_dtype(precision: str) -> np.dtype:
    # emu16 stores in float16 but computes in float32
    return np.dtype(np.float64 if precision == CHECK64 else np.float32)


def _finish(result: np.ndarray, precision: str) -> np.ndarray:
    return result.astype(dtype_of(precision), copy=False)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D tensors; output precision = min of inputs."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D tensors, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    prec = min_precision(precision_of(a), precision_of(b))
    ct = _compute_dtype(prec)
    return _finish(a.astype(ct, copy=False) @ b.astype(ct, copy=False), prec)


def softmax_rows(t: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of t/temperature, stabilized by row-max subtraction."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    if t.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D tensor, got {t.ndim}-D")
    prec = precision_of(t)
    ct = _compute_dtype(prec)
    scores = np.ascontiguousarray(t, dtype=ct) / ct.type(temperature)
    ones = np.ones_like(scores)
    return _finish(kernels.masked_softmax_fwd(scores, ones), prec)


def layer_norm(t: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis to mean 0 / variance 1, then affine."""
    h = t.shape[-1] if t.ndim else 0
    if h == 0:
        raise DimensionError("layer_norm requires a non-empty last dimension")
    if gain.shape != (h,) or bias.shape != (h,):
        raise DimensionError(f"gain/bias must have shape ({h},)")
    prec = min_precision(precision_of(t),
                         min_precision(precision_of(gain), precision_of(bias)))
    ct = _compute_dtype(prec)
    rows = np.ascontiguousarray(t, dtype=ct).reshape(-1, h)
    out, _, _ = kernels.layer_norm_fwd(rows, gain.astype(ct, copy=False),
                                       bias.astype(ct, copy=False), ct.type(eps))
    return _finish(out.reshape(t.shape), prec)


def dropout_mask(shape, rate: float, seed: int, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
    dtype = np.dtype(dtype)
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    rng = np.random.default_rng(seed)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def dropout(t: np.ndarray, rate: float, seed: int) -> np.ndarray:
    """Zero each element with probability rate; scale survivors by 1/(1-rate).

    Fully determined by the seed; rate 0 is the identity.
    """
    prec = precision_of(t)
    ct = _compute_dtype(prec)
    mask = dropout_mask(t.shape, rate, seed, dtype=ct)
    return _finish(t.astype(ct, copy=False) * mask, prec)
