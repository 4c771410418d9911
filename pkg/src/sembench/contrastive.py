"""Dropout-pair contrastive training: loss, exact gradients, Adam, AMP emulation.

Each training step encodes the same batch twice with independent dropout
seeds, pools both hidden stacks, builds the pairwise cosine-similarity
matrix, and minimizes the temperature-scaled softmax cross-entropy of the
diagonal (positive pairs) against in-batch negatives:

    loss_i = -log( exp(sim_ii / tau) / sum_j exp(sim_ij / tau) )

Gradients are exact reverse-mode derivatives of the mean loss through both
forward passes. The mixed-precision path reruns the same computation with
activations and gradient intermediates rounded through emulated binary16,
scaling the loss gradient up front and unscaling parameter gradients after,
with a skip-and-halve policy on overflow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .corpus import TokenizedCorpus, sample_batch
from .errors import DimensionError, DomainError, NumericError, SamplingError
from .numerics import derive_seed, emu16_round, softmax_rows
from .pooling import PoolingMethod, parse_method, pool_backward, pool_with_cache

COS_EPS = 1e-8
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# namespaces for per-step seed derivation
_SEED_DROP_A = 0
_SEED_DROP_B = 1
_SEED_BATCH = 2


@dataclass
class TrainConfig:
    temperature: float = 0.05
    learning_rate: float = 3e-5
    batch_size: int = 64
    max_steps: int = 1000
    pooling: PoolingMethod = field(default_factory=lambda: parse_method("avg-last"))
    seed: int = 0
    amp: bool = False
    loss_scale: float = 65536.0

    def validate(self) -> None:
        if self.temperature <= 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise DomainError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.loss_scale <= 0:
            raise DomainError(f"loss_scale must be positive, got {self.loss_scale}")


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, with an epsilon-guarded denominator."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        warnings.warn("cosine_sim of two zero vectors is degenerate; returning 0")
        return 0.0
    return float(a @ b / (na * nb + COS_EPS))


class _SimCache:
    __slots__ = ("h1", "h2", "na", "nb", "dot", "denom")

    def __init__(self, h1, h2, na, nb, dot, denom):
        self.h1, self.h2 = h1, h2
        self.na, self.nb = na, nb
        self.dot, self.denom = dot, denom


def _sim_with_cache(h1: np.ndarray, h2: np.ndarray):
    if h1.shape != h2.shape or h1.ndim != 2:
        raise DimensionError(f"embedding shapes differ: {h1.shape} vs {h2.shape}")
    na = np.linalg.norm(h1, axis=1)
    nb = np.linalg.norm(h2, axis=1)
    if np.any((na == 0) & (nb == 0)):
        warnings.warn("zero embedding rows produce degenerate cosine similarities")
    dot = h1 @ h2.T
    denom = na[:, None] * nb[None, :] + h1.dtype.type(COS_EPS)
    return dot / denom, _SimCache(h1, h2, na, nb, dot, denom)


def sim_matrix(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; entry (i, j) couples h1_i with h2_j."""
    sims, _ = _sim_with_cache(h1, h2)
    return sims


def _sim_backward(cache: _SimCache, dsims: np.ndarray):
    """Adjoint of _sim_with_cache for both embedding matrices."""
    inv_na = np.where(cache.na > 0, 1.0 / np.where(cache.na > 0, cache.na, 1.0), 0.0)
    inv_nb = np.where(cache.nb > 0, 1.0 / np.where(cache.nb > 0, cache.nb, 1.0), 0.0)
    w = dsims / cache.denom
    t = w * cache.dot / cache.denom
    dh1 = w @ cache.h2 - ((t @ cache.nb) * inv_na)[:, None] * cache.h1
    dh2 = w.T @ cache.h1 - ((t.T @ cache.na) * inv_nb)[:, None] * cache.h2
    return dh1, dh2


def infonce_loss(sims: np.ndarray, temperature: float):
    """Mean contrastive loss and the per-example loss vector.

    loss_i = logsumexp_j(sims_ij / tau) - sims_ii / tau, guaranteed >= 0.
    """
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {sims.shape}")
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = sims / temperature
    shift = z - np.diagonal(z)[:, None]  # shift_ii == 0 exactly
    m = shift.max(axis=1)
    per_example = m + np.log(np.exp(shift - m[:, None]).sum(axis=1))
    return float(per_example.mean()), per_example


def _infonce_dsims(sims: np.ndarray, temperature: float, grad_scale: float):
    """d(mean loss)/d(sims), optionally scaled."""
    n = sims.shape[0]
    p = softmax_rows(sims, temperature)
    dsims = (p - np.eye(n, dtype=sims.dtype)) * sims.dtype.type(
        grad_scale / (n * temperature))
    return dsims


def _loss_and_grads(model: enc.EncoderModel, batch, config: TrainConfig,
                    step: int = 0, want_grads: bool = True,
                    f16: bool = False, grad_scale: float = 1.0):
    """Shared forward/backward pipeline for the dropout-pair objective.

    Returns (loss, per_example, grads-or-None). The two encoder passes use
    seeds derived from (config.seed, step, 0|1), so the loss is a
    deterministic, differentiable function of the parameters.
    """
    seed_a = derive_seed(config.seed, step, _SEED_DROP_A)
    seed_b = derive_seed(config.seed, step, _SEED_DROP_B)
    stack1, caches1 = enc._forward(model, batch, seed_a, training=True,
                                   keep_cache=want_grads, f16_act=f16)
    stack2, caches2 = enc._forward(model, batch, seed_b, training=True,
                                   keep_cache=want_grads, f16_act=f16)
    h1, pc1 = pool_with_cache(stack1, config.pooling)
    h2, pc2 = pool_with_cache(stack2, config.pooling)
    if f16:
        h1, h2 = emu16_round(h1), emu16_round(h2)
    sims, simcache = _sim_with_cache(h1, h2)
    loss, per_example = infonce_loss(sims, config.temperature)
    if not want_grads:
        return loss, per_example, None

    dsims = _infonce_dsims(sims, config.temperature, grad_scale)
    dh1, dh2 = _sim_backward(simcache, dsims)
    if f16:
        dh1, dh2 = emu16_round(dh1), emu16_round(dh2)
    n_layers = model.config.n_layers
    grads = None
    for caches, pc, dh in ((caches1, pc1, dh1), (caches2, pc2, dh2)):
        dmap = pool_backward(pc, dh)
        dlayers = [dmap.get(i) for i in range(n_layers + 1)]
        part = enc.backward(model, batch, caches, dlayers, f16_grads=f16)
        if grads is None:
            grads = part
        else:
            for name in grads:
                grads[name] += part[name]
    return loss, per_example, grads


def compute_loss(model: enc.EncoderModel, batch, config: TrainConfig,
                 step: int = 0) -> float:
    """Loss only; the finite-difference oracle re-evaluates this."""
    loss, _, _ = _loss_and_grads(model, batch, config, step, want_grads=False)
    return loss


def compute_gradients(model: enc.EncoderModel, batch, config: TrainConfig,
                      step: int = 0) -> dict[str, np.ndarray]:
    """Exact gradients of the mean contrastive loss for every parameter."""
    loss, _, grads = _loss_and_grads(model, batch, config, step)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}", step=step)
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_adam(model: enc.EncoderModel) -> AdamState:
    return AdamState(m={k: np.zeros_like(p) for k, p in model.params.items()},
                     v={k: np.zeros_like(p) for k, p in model.params.items()})


def adam_step(model: enc.EncoderModel, grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, param in model.params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter "
                                 f"shape {param.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        param -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# loss-scaled mixed precision
# ---------------------------------------------------------------------------


@dataclass
class LossScaler:
    """Gradient scale with skip-and-halve overflow handling."""

    scale: float = 65536.0
    overflows: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise DomainError(f"loss scale must be positive, got {self.scale}")


def scaled_backward(model: enc.EncoderModel, batch, config: TrainConfig,
                    scaler: LossScaler, step: int = 0):
    """Gradients under emulated-f16 activations/gradients with loss scaling.

    The loss gradient is multiplied by scaler.scale before backpropagation
    and every parameter gradient divided by it after. If any non-finite
    value appears, the step is skipped: returns (loss, None), halves the
    scale, and counts the overflow.
    """
    # non-finite values are the overflow signal here, not an error condition
    with np.errstate(invalid="ignore", over="ignore"):
        loss, _, grads = _loss_and_grads(model, batch, config, step,
                                         f16=True, grad_scale=scaler.scale)
    finite = np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())
    if not finite:
        scaler.scale /= 2.0
        scaler.overflows += 1
        return loss, None
    inv = 1.0 / scaler.scale
    for name in grads:
        grads[name] = grads[name] * grads[name].dtype.type(inv)
    return loss, grads


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def train(model: enc.EncoderModel, corpus: TokenizedCorpus, config: TrainConfig,
          eval_hook=None, eval_every: int = 0):
    """Run the contrastive loop for config.max_steps steps.

    Returns (model, trace) where trace is one dict per step with keys
    step/loss (and scale when amp is on). eval_hook(step, model) fires every
    eval_every steps when both are given; numeric blowups raise NumericError
    with the failing step.
    """
    config.validate()
    if config.batch_size > len(corpus):
        raise SamplingError(f"batch_size {config.batch_size} exceeds corpus "
                            f"size {len(corpus)}")
    state = init_adam(model)
    scaler = LossScaler(config.loss_scale) if config.amp else None
    trace: list[dict] = []
    for step in range(1, config.max_steps + 1):
        batch = sample_batch(corpus, config.batch_size,
                             derive_seed(config.seed, step, _SEED_BATCH))
        if config.amp:
            loss, grads = scaled_backward(model, batch, config, scaler, step)
            if grads is not None:
                adam_step(model, grads, state, config.learning_rate)
            trace.append({"step": step, "loss": loss, "scale": scaler.scale})
        else:
            loss, _, grads = _loss_and_grads(model, batch, config, step)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss {loss}", step=step)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericError("non-finite gradient", step=step)
            adam_step(model, grads, state, config.learning_rate)
            trace.append({"step": step, "loss": loss})
        if eval_hook is not None and eval_every > 0 and step % eval_every == 0:
            eval_hook(step, model)
    return model, trace


def write_loss_trace(trace: list[dict], path, amp: bool = False) -> None:
    """CSV trace: step,loss and a scale column only when amp was on."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,scale\n" if amp else "step,loss\n")
        for row in trace:
            if amp:
                fh.write(f"{row['step']},{row['loss']!r},{row['scale']!r}\n")
            else:
                fh.write(f"{row['step']},{row['loss']!r}\n")
