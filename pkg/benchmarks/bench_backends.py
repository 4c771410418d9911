#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot kernels on training-shaped arrays and a full training
step (two forward passes + backward + Adam) under both backends. The first
numba call per signature JIT-compiles; a warmup pass keeps that out of the
timings.

Usage:
    python benchmarks/bench_backends.py [--steps 20]
"""

import argparse
import time

import numpy as np

from sembench import backend, kernels
from sembench.contrastive import TrainConfig, adam_step, compute_gradients, init_adam
from sembench.corpus import build_vocab, generate_synthetic_corpus, prepare_corpus, sample_batch
from sembench.encoder import EncoderConfig, init_model
from sembench.pooling import parse_method


def time_call(fn, repeat):
    fn()  # warmup / JIT
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows, h = 64 * 32, 64
    x = rng.normal(size=(rows, h)).astype(np.float32)
    gain = np.ones(h, dtype=np.float32)
    bias = np.zeros(h, dtype=np.float32)
    scores = rng.normal(size=(64 * 4 * 32, 32)).astype(np.float32)
    mask = (rng.random(scores.shape) > 0.2).astype(np.float32)
    mask[:, 0] = 1.0
    u = rng.normal(size=rows * 256).astype(np.float32)

    cases = {
        "layer_norm_fwd": lambda: kernels.layer_norm_fwd(x, gain, bias, np.float32(1e-5)),
        "masked_softmax_fwd": lambda: kernels.masked_softmax_fwd(scores, mask),
        "gelu_fwd": lambda: kernels.gelu_fwd(u),
    }
    results = {}
    for name, fn in cases.items():
        results[name] = time_call(fn, repeat)
    return results


def bench_train_step(steps):
    sentences = generate_synthetic_corpus(64, seed=1)
    vocab = build_vocab(sentences, 8192)
    corpus = prepare_corpus(sentences, vocab, 32)
    config = EncoderConfig(vocab_size=vocab.size)
    model = init_model(config, seed=0)
    tc = TrainConfig(batch_size=64, pooling=parse_method("avg-last"), seed=0)
    state = init_adam(model)
    batch = sample_batch(corpus, tc.batch_size, seed=0)

    def step():
        grads = compute_gradients(model, batch, tc, step=1)
        adam_step(model, grads, state, tc.learning_rate)

    step()  # warmup / JIT
    start = time.perf_counter()
    for _ in range(steps):
        step()
    return (time.perf_counter() - start) / steps


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=20,
                        help="training steps to average over (default 20)")
    parser.add_argument("--repeat", type=int, default=50,
                        help="kernel call repetitions (default 50)")
    args = parser.parse_args()

    backends = ["numpy"] + (["numba"] if backend.HAS_NUMBA else [])
    if not backend.HAS_NUMBA:
        print("numba not installed; benchmarking the numpy fallback only\n")

    kernel_times = {}
    step_times = {}
    for name in backends:
        with backend.use_backend(name):
            kernel_times[name] = bench_kernels(args.repeat)
            step_times[name] = bench_train_step(args.steps)

    width = max(len(k) for k in kernel_times[backends[0]]) + 2
    header = f"{'kernel'.ljust(width)}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel_name in kernel_times[backends[0]]:
        row = kernel_name.ljust(width)
        for b in backends:
            row += f"{kernel_times[b][kernel_name] * 1e6:>10.1f}us"
        if len(backends) == 2:
            ratio = kernel_times["numpy"][kernel_name] / kernel_times["numba"][kernel_name]
            row += f"{ratio:>9.2f}x"
        print(row)

    row = "train_step".ljust(width)
    for b in backends:
        row += f"{step_times[b] * 1e3:>10.1f}ms"
    if len(backends) == 2:
        row += f"{step_times['numpy'] / step_times['numba']:>9.2f}x"
    print(row)


if __name__ == "__main__":
    main()
