"""Miniature pre-norm transformer encoder with explicit reverse-mode gradients.

The forward pass returns every layer's hidden states (the residual stream at
each block boundary, index 0 being the embedding output) so pooling can select
arbitrary layers. Dropout placement is fixed: after the attention output
projection and after the FFN output, only when training, with masks fully
determined by the dropout seed.

The cached forward plus `backward` implement the exact adjoint of the
computation; the contrastive module composes them with the pooling and loss
adjoints to get parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, InputError
from .numerics import (
    TRAIN32,
    derive_seed,
    dropout_mask,
    dtype_of,
    emu16_round,
)

LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ffn_dim: int = 256
    max_seq_len: int = 32
    dropout_rate: float = 0.1

    def validate(self) -> None:
        if self.vocab_size < 1 or self.hidden_dim < 1 or self.ffn_dim < 1:
            raise ConfigError("vocab_size, hidden_dim and ffn_dim must be positive")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.n_heads < 1 or self.hidden_dim % self.n_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads


@dataclass
class EncoderModel:
    config: EncoderConfig
    params: dict[str, np.ndarray]
    precision: str = TRAIN32

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config,
                            {k: v.copy() for k, v in self.params.items()},
                            self.precision)


@dataclass
class HiddenStack:
    """Per-layer hidden states for one batch: n_layers + 1 (batch, seq, H) arrays."""

    layers: list[np.ndarray]
    mask: np.ndarray  # (batch, seq) int8, copied from the input batch

    @property
    def n_blocks(self) -> int:
        return len(self.layers) - 1


def param_names(config: EncoderConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        base = f"layers.{i}"
        names += [f"{base}.ln1.gain", f"{base}.ln1.bias"]
        names += [f"{base}.attn.{w}" for w in
                  ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")]
        names += [f"{base}.ln2.gain", f"{base}.ln2.bias"]
        names += [f"{base}.ffn.w1", f"{base}.ffn.b1", f"{base}.ffn.w2", f"{base}.ffn.b2"]
    return names


def init_model(config: EncoderConfig, seed: int, precision: str = TRAIN32) -> EncoderModel:
    """Weights ~ Normal(0, 0.02), biases 0, layer-norm gains 1; seeded."""
    config.validate()
    dt = dtype_of(precision)
    rng = np.random.default_rng(seed)
    h, f = config.hidden_dim, config.ffn_dim

    def normal(*shape):
        return rng.normal(0.0, INIT_STD, size=shape).astype(dt)

    params: dict[str, np.ndarray] = {
        "tok_emb": normal(config.vocab_size, h),
        "pos_emb": normal(config.max_seq_len, h),
    }
    for i in range(config.n_layers):
        base = f"layers.{i}"
        params[f"{base}.ln1.gain"] = np.ones(h, dtype=dt)
        params[f"{base}.ln1.bias"] = np.zeros(h, dtype=dt)
        for w in ("wq", "wk", "wv", "wo"):
            params[f"{base}.attn.{w}"] = normal(h, h)
        for b in ("bq", "bk", "bv", "bo"):
            params[f"{base}.attn.{b}"] = np.zeros(h, dtype=dt)
        params[f"{base}.ln2.gain"] = np.ones(h, dtype=dt)
        params[f"{base}.ln2.bias"] = np.zeros(h, dtype=dt)
        params[f"{base}.ffn.w1"] = normal(h, f)
        params[f"{base}.ffn.b1"] = np.zeros(f, dtype=dt)
        params[f"{base}.ffn.w2"] = normal(f, h)
        params[f"{base}.ffn.b2"] = np.zeros(h, dtype=dt)
    return EncoderModel(config, params, precision)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, s, h = x.shape
    return x.reshape(b, s, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, nh, s, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, s, nh * dh)


def _ln_fwd(x, gain, bias):
    b, s, h = x.shape
    out, xhat, inv = kernels.layer_norm_fwd(
        np.ascontiguousarray(x).reshape(-1, h), gain, bias, x.dtype.type(LN_EPS))
    return out.reshape(b, s, h), xhat, inv


def _ln_bwd(dy, xhat, inv, gain):
    b, s, h = dy.shape
    dx, dgain, dbias = kernels.layer_norm_bwd(
        np.ascontiguousarray(dy).reshape(-1, h), xhat, inv, gain)
    return dx.reshape(b, s, h), dgain, dbias


class _BlockCache:
    __slots__ = ("x", "xhat1", "inv1", "a", "qh", "kh", "vh", "probs", "ctx",
                 "mask_attn", "h_mid", "xhat2", "inv2", "c", "u", "gu", "mask_ffn")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


def _attention(p, prefix, a, maskf, n_heads):
    """Masked multi-head self-attention on the normalized input a."""
    b, s, h = a.shape
    dh = h // n_heads
    a2 = a.reshape(-1, h)
    q = (a2 @ p[f"{prefix}.attn.wq"] + p[f"{prefix}.attn.bq"]).reshape(b, s, h)
    k = (a2 @ p[f"{prefix}.attn.wk"] + p[f"{prefix}.attn.bk"]).reshape(b, s, h)
    v = (a2 @ p[f"{prefix}.attn.wv"] + p[f"{prefix}.attn.bv"]).reshape(b, s, h)
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = a.dtype.type(1.0 / np.sqrt(dh))
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale  # (b, nh, s, s)
    # key mask broadcast to every (head, query) row
    mask_rows = np.ascontiguousarray(
        np.broadcast_to(maskf[:, None, None, :], scores.shape)).reshape(-1, s)
    probs = kernels.masked_softmax_fwd(
        np.ascontiguousarray(scores).reshape(-1, s), mask_rows).reshape(b, n_heads, s, s)
    ctx = _merge_heads(probs @ vh)
    out = (ctx.reshape(-1, h) @ p[f"{prefix}.attn.wo"] + p[f"{prefix}.attn.bo"]).reshape(b, s, h)
    return out, qh, kh, vh, probs, ctx, mask_rows


def _forward(model: EncoderModel, batch, dropout_seed: int, training: bool,
             keep_cache: bool, f16_act: bool = False):
    """Full encoder forward; returns (HiddenStack, caches or None)."""
    cfg = model.config
    p = model.params
    ids = np.asarray(batch.ids)
    if ids.ndim != 2:
        raise InputError(f"batch ids must be 2-D, got {ids.ndim}-D")
    b, s = ids.shape
    if s > cfg.max_seq_len:
        raise InputError(f"sequence length {s} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(
            f"token id out of range [0, {cfg.vocab_size}): {ids.min()}..{ids.max()}")
    dt = dtype_of(model.precision)
    maskf = np.asarray(batch.mask, dtype=dt)

    h = p["tok_emb"][ids] + p["pos_emb"][:s]
    if f16_act:
        h = emu16_round(h)
    layers = [h]
    caches: list[_BlockCache] | None = [] if keep_cache else None
    rate = cfg.dropout_rate if training else 0.0

    for i in range(cfg.n_layers):
        prefix = f"layers.{i}"
        x = h
        a, xhat1, inv1 = _ln_fwd(x, p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"])
        attn, qh, kh, vh, probs, ctx, _ = _attention(p, prefix, a, maskf, cfg.n_heads)
        mask_attn = None
        if rate > 0.0:
            mask_attn = dropout_mask(attn.shape, rate, derive_seed(dropout_seed, i, 0), dt)
            attn = attn * mask_attn
        h_mid = x + attn
        c, xhat2, inv2 = _ln_fwd(h_mid, p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"])
        u = (c.reshape(-1, cfg.hidden_dim) @ p[f"{prefix}.ffn.w1"] + p[f"{prefix}.ffn.b1"])
        gu = kernels.gelu_fwd(u.reshape(-1)).reshape(u.shape)
        w = (gu @ p[f"{prefix}.ffn.w2"] + p[f"{prefix}.ffn.b2"]).reshape(b, s, cfg.hidden_dim)
        mask_ffn = None
        if rate > 0.0:
            mask_ffn = dropout_mask(w.shape, rate, derive_seed(dropout_seed, i, 1), dt)
            w = w * mask_ffn
        h = h_mid + w
        if f16_act:
            h = emu16_round(h)
        layers.append(h)
        if keep_cache:
            caches.append(_BlockCache(x=x, xhat1=xhat1, inv1=inv1, a=a, qh=qh, kh=kh,
                                      vh=vh, probs=probs, ctx=ctx, mask_attn=mask_attn,
                                      h_mid=h_mid, xhat2=xhat2, inv2=inv2, c=c, u=u,
                                      gu=gu, mask_ffn=mask_ffn))
    return HiddenStack(layers, np.asarray(batch.mask).copy()), caches


def encode(model: EncoderModel, batch, dropout_seed: int = 0,
           training: bool = False) -> HiddenStack:
    """Encode a batch, returning all n_layers + 1 hidden-state tensors."""
    stack, _ = _forward(model, batch, dropout_seed, training, keep_cache=False)
    return stack


def _block_backward(p, prefix, cache: _BlockCache, dh_out, n_heads, f16_grads):
    """Adjoint of one block: dh_out -> (dx, param grad contributions)."""
    b, s, h = dh_out.shape
    dh = h // n_heads
    grads: dict[str, np.ndarray] = {}

    # FFN sublayer
    dw = dh_out if cache.mask_ffn is None else dh_out * cache.mask_ffn
    dw2 = dw.reshape(-1, h)
    gu2 = cache.gu
    grads[f"{prefix}.ffn.w2"] = gu2.T @ dw2
    grads[f"{prefix}.ffn.b2"] = dw2.sum(axis=0)
    dgu = dw2 @ p[f"{prefix}.ffn.w2"].T
    du = kernels.gelu_bwd(cache.u.reshape(-1), dgu.reshape(-1)).reshape(cache.u.shape)
    c2 = cache.c.reshape(-1, h)
    grads[f"{prefix}.ffn.w1"] = c2.T @ du
    grads[f"{prefix}.ffn.b1"] = du.sum(axis=0)
    dc = (du @ p[f"{prefix}.ffn.w1"].T).reshape(b, s, h)
    dx_ln2, dg2, db2 = _ln_bwd(dc, cache.xhat2, cache.inv2, p[f"{prefix}.ln2.gain"])
    grads[f"{prefix}.ln2.gain"] = dg2
    grads[f"{prefix}.ln2.bias"] = db2
    dh_mid = dh_out + dx_ln2
    if f16_grads:
        dh_mid = emu16_round(dh_mid)

    # attention sublayer
    do = dh_mid if cache.mask_attn is None else dh_mid * cache.mask_attn
    do2 = do.reshape(-1, h)
    ctx2 = cache.ctx.reshape(-1, h)
    grads[f"{prefix}.attn.wo"] = ctx2.T @ do2
    grads[f"{prefix}.attn.bo"] = do2.sum(axis=0)
    dctx = (do2 @ p[f"{prefix}.attn.wo"].T).reshape(b, s, h)
    dctxh = _split_heads(dctx, n_heads)
    dprobs = dctxh @ cache.vh.transpose(0, 1, 3, 2)
    dvh = cache.probs.transpose(0, 1, 3, 2) @ dctxh
    dscores = kernels.masked_softmax_bwd(
        np.ascontiguousarray(dprobs).reshape(-1, s),
        np.ascontiguousarray(cache.probs).reshape(-1, s)).reshape(b, n_heads, s, s)
    scale = dh_out.dtype.type(1.0 / np.sqrt(dh))
    dqh = (dscores @ cache.kh) * scale
    dkh = (dscores.transpose(0, 1, 3, 2) @ cache.qh) * scale
    dq2 = _merge_heads(dqh).reshape(-1, h)
    dk2 = _merge_heads(dkh).reshape(-1, h)
    dv2 = _merge_heads(dvh).reshape(-1, h)
    a2 = cache.a.reshape(-1, h)
    grads[f"{prefix}.attn.wq"] = a2.T @ dq2
    grads[f"{prefix}.attn.bq"] = dq2.sum(axis=0)
    grads[f"{prefix}.attn.wk"] = a2.T @ dk2
    grads[f"{prefix}.attn.bk"] = dk2.sum(axis=0)
    grads[f"{prefix}.attn.wv"] = a2.T @ dv2
    grads[f"{prefix}.attn.bv"] = dv2.sum(axis=0)
    da = (dq2 @ p[f"{prefix}.attn.wq"].T + dk2 @ p[f"{prefix}.attn.wk"].T
          + dv2 @ p[f"{prefix}.attn.wv"].T).reshape(b, s, h)
    dx_ln1, dg1, db1 = _ln_bwd(da, cache.xhat1, cache.inv1, p[f"{prefix}.ln1.gain"])
    grads[f"{prefix}.ln1.gain"] = dg1
    grads[f"{prefix}.ln1.bias"] = db1
    dx = dh_mid + dx_ln1
    return dx, grads


def backward(model: EncoderModel, batch, caches: list[_BlockCache],
             dlayers: list[np.ndarray | None], f16_grads: bool = False
             ) -> dict[str, np.ndarray]:
    """Backpropagate gradients w.r.t. the hidden stack into parameter space.

    dlayers[i] is the loss gradient w.r.t. stack layer i (None where the
    pooling did not select the layer). Returns gradients for every parameter.
    """
    cfg = model.config
    p = model.params
    ids = np.asarray(batch.ids)
    b, s = ids.shape
    dt = dtype_of(model.precision)

    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    g = dlayers[cfg.n_layers]
    if g is None:
        g = np.zeros((b, s, cfg.hidden_dim), dtype=dt)
    for i in range(cfg.n_layers - 1, -1, -1):
        if f16_grads:
            g = emu16_round(g)
        g, block_grads = _block_backward(p, f"layers.{i}", caches[i], g,
                                         cfg.n_heads, f16_grads)
        for name, arr in block_grads.items():
            grads[name] += arr
        if dlayers[i] is not None:
            g = g + dlayers[i]
    if f16_grads:
        g = emu16_round(g)
    np.add.at(grads["tok_emb"], ids.reshape(-1), g.reshape(-1, cfg.hidden_dim))
    grads["pos_emb"][:s] += g.sum(axis=0)
    if f16_grads:
        for name in grads:
            grads[name] = emu16_round(grads[name])
    return grads
