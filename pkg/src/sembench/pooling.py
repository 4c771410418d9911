"""Collapse per-layer token states into one sentence embedding.

A pooling method is a layer selector crossed with a token-reduce function
(average or max). Reduction runs over mask-selected tokens only, per selected
layer; non-concat selectors then average the per-layer vectors, while
concat_last_four concatenates them (output dim 4H instead of H).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import HiddenStack
from .errors import ConfigError, InputError

AVERAGE = "average"
MAX = "max"
REDUCES = (AVERAGE, MAX)

LAST = "last"
SECOND_LAST = "second_last"
ALL = "all"
FIRST_LAST = "first_last"
LAST_TWO = "last_two"
LAST_FOUR = "last_four"
CONCAT_LAST_FOUR = "concat_last_four"
SELECTORS = (LAST, SECOND_LAST, ALL, FIRST_LAST, LAST_TWO, LAST_FOUR, CONCAT_LAST_FOUR)

_MIN_LAYERS = {LAST: 1, SECOND_LAST: 2, ALL: 1, FIRST_LAST: 1,
               LAST_TWO: 2, LAST_FOUR: 4, CONCAT_LAST_FOUR: 4}

_SELECTOR_NAMES = {LAST: "last", SECOND_LAST: "second-last", ALL: "all",
                   FIRST_LAST: "first-last", LAST_TWO: "last-two",
                   LAST_FOUR: "last-four"}


@dataclass(frozen=True)
class PoolingMethod:
    selector: str
    reduce: str = AVERAGE

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ConfigError(f"unknown layer selector {self.selector!r}")
        if self.reduce not in REDUCES:
            raise ConfigError(f"unknown reduce {self.reduce!r}")

    @property
    def min_layers(self) -> int:
        return _MIN_LAYERS[self.selector]

    def output_dim(self, hidden_dim: int) -> int:
        return 4 * hidden_dim if self.selector == CONCAT_LAST_FOUR else hidden_dim

    @property
    def name(self) -> str:
        if self.selector == CONCAT_LAST_FOUR:
            return "concat-last-four" if self.reduce == AVERAGE else "max-concat-last-four"
        prefix = "avg" if self.reduce == AVERAGE else "max"
        return f"{prefix}-{_SELECTOR_NAMES[self.selector]}"


def parse_method(name: str) -> PoolingMethod:
    """Parse a serialized method name (e.g. "avg-last", "concat-last-four")."""
    table = {m.name: m for m in
             [PoolingMethod(sel, red) for sel in SELECTORS for red in REDUCES]}
    try:
        return table[name]
    except KeyError:
        raise ConfigError(
            f"unknown pooling method {name!r}; expected one of {sorted(table)}") from None


def selected_layers(selector: str, n_blocks: int) -> list[int]:
    """Stack indices picked by a selector, for a stack with n_blocks blocks."""
    need = _MIN_LAYERS[selector]
    if n_blocks < need:
        raise ConfigError(
            f"selector {selector!r} needs at least {need} layers, model has {n_blocks}")
    if selector == LAST:
        return [n_blocks]
    if selector == SECOND_LAST:
        return [n_blocks - 1]
    if selector == ALL:
        return list(range(n_blocks + 1))
    if selector == FIRST_LAST:
        return [0, n_blocks]
    if selector == LAST_TWO:
        return [n_blocks - 1, n_blocks]
    return [n_blocks - 3, n_blocks - 2, n_blocks - 1, n_blocks]  # last_four variants


class _PoolCache:
    __slots__ = ("method", "layers", "mask", "counts", "argmax", "shape")

    def __init__(self, method, layers, mask, counts, argmax, shape):
        self.method = method
        self.layers = layers
        self.mask = mask
        self.counts = counts
        self.argmax = argmax
        self.shape = shape


def _reduce_layer(h: np.ndarray, maskf: np.ndarray, counts: np.ndarray, reduce: str):
    """Masked token reduction of one (B, S, H) layer; returns (vec, argmax)."""
    if reduce == AVERAGE:
        vec = (h * maskf[:, :, None]).sum(axis=1) / counts[:, None]
        return vec, None
    neg = np.where(maskf[:, :, None] != 0, h, -np.inf)
    amax = neg.argmax(axis=1)                       # (B, H)
    vec = np.take_along_axis(h, amax[:, None, :], axis=1)[:, 0, :]
    return vec, amax


def pool_with_cache(stack: HiddenStack, method: PoolingMethod):
    """Pool a hidden stack; returns (embeddings (B, D), backward cache)."""
    idxs = selected_layers(method.selector, stack.n_blocks)
    mask = np.asarray(stack.mask)
    counts = mask.sum(axis=1).astype(stack.layers[0].dtype)
    if np.any(counts == 0):
        raise InputError("a sentence has no unmasked tokens")
    maskf = mask.astype(stack.layers[0].dtype)
    reduced, argmaxes = [], []
    for i in idxs:
        vec, amax = _reduce_layer(stack.layers[i], maskf, counts, method.reduce)
        reduced.append(vec)
        argmaxes.append(amax)
    if method.selector == CONCAT_LAST_FOUR:
        pooled = np.concatenate(reduced, axis=1)
    else:
        pooled = sum(reduced) / len(reduced)
    cache = _PoolCache(method, idxs, maskf, counts, argmaxes, stack.layers[0].shape)
    return pooled, cache


def pool(stack: HiddenStack, method: PoolingMethod) -> np.ndarray:
    """Sentence embeddings of shape (batch, D); D = 4H for concat_last_four."""
    pooled, _ = pool_with_cache(stack, method)
    return pooled


def pool_backward(cache: _PoolCache, dpooled: np.ndarray) -> dict[int, np.ndarray]:
    """Adjoint of pool_with_cache: maps dL/dpooled to per-layer dL/dh."""
    b, s, h = cache.shape
    method = cache.method
    dlayers: dict[int, np.ndarray] = {}
    for k, i in enumerate(cache.layers):
        if method.selector == CONCAT_LAST_FOUR:
            dvec = dpooled[:, k * h:(k + 1) * h]
        else:
            dvec = dpooled / len(cache.layers)
        dh = np.zeros((b, s, h), dtype=dpooled.dtype)
        if method.reduce == AVERAGE:
            dh += (dvec / cache.counts[:, None])[:, None, :] * cache.mask[:, :, None]
        else:
            np.put_along_axis(dh, cache.argmax[k][:, None, :], dvec[:, None, :], axis=1)
        if i in dlayers:
            dlayers[i] += dh
        else:
            dlayers[i] = dh
    return dlayers
