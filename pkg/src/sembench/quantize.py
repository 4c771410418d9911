"""Post-training symmetric int8 quantization of checkpoint weights.

Per-tensor scheme: scale = max|t| / 127 (1.0 for an all-zero tensor), codes
are round-half-to-even of t/scale clamped to [-127, 127] (-128 unused, so
negation is exact). Checkpoint quantization rewrites every rank-2 f32 record
(weight matrices and both embedding tables) as an int8 record; biases and
layer-norm parameters stay f32.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import DTYPE_F32, DTYPE_INT8, TensorRecord, read_records, write_records
from .errors import NumericError

QMAX = 127


@dataclass
class QuantizedTensor:
    values: np.ndarray  # int8
    scale: float        # > 0
    shape: tuple[int, ...]


def quantize_tensor(t: np.ndarray) -> QuantizedTensor:
    """Symmetric per-tensor int8 quantization."""
    t = np.asarray(t)
    if not np.all(np.isfinite(t)):
        raise NumericError("cannot quantize a tensor with non-finite values")
    peak = float(np.max(np.abs(t))) if t.size else 0.0
    scale = peak / QMAX if peak > 0.0 else 1.0
    if scale == 0.0:  # peak/127 underflowed: subnormal tensor, codes all zero
        scale = 1.0
    codes = np.clip(np.round(t.astype(np.float64) / scale), -QMAX, QMAX)
    return QuantizedTensor(codes.astype(np.int8), scale, tuple(t.shape))


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct float32 values; elementwise error <= scale/2."""
    return (q.values.astype(np.float32) * np.float32(q.scale)).reshape(q.shape)


@dataclass
class SizeReport:
    tensors: list[tuple[str, int, int, float]]  # name, f32 payload, q payload, ratio
    bytes_before: int
    bytes_after: int

    @property
    def ratio(self) -> float:
        return self.bytes_after / self.bytes_before

    def to_csv(self) -> str:
        lines = ["tensor,bytes_f32,bytes_int8,ratio"]
        for name, before, after, ratio in self.tensors:
            lines.append(f"{name},{before},{after},{ratio:.4f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"checkpoint bytes: {self.bytes_before} -> {self.bytes_after} "
                 f"(ratio {self.ratio:.3f}, saved {1.0 - self.ratio:.1%})"]
        quantized = [t for t in self.tensors if t[1] != t[2]]
        lines.append(f"quantized tensors: {len(quantized)} of {len(self.tensors)}")
        return "\n".join(lines)


def quantize_checkpoint(in_path, out_path) -> SizeReport:
    """Rewrite rank-2 f32 records as int8+scale; report payload and file sizes."""
    config, records = read_records(in_path)
    out_records: list[TensorRecord] = []
    rows: list[tuple[str, int, int, float]] = []
    for rec in records:
        f32_payload = 4 * int(np.prod(rec.shape))
        if rec.dtype == DTYPE_F32 and len(rec.shape) == 2:
            q = quantize_tensor(rec.data)
            out = TensorRecord(rec.name, DTYPE_INT8, rec.shape, q.values, q.scale)
        else:
            out = rec
        rows.append((rec.name, f32_payload, out.payload_bytes(),
                     out.payload_bytes() / f32_payload))
        out_records.append(out)
    write_records(out_path, config, out_records)
    return SizeReport(rows, os.path.getsize(in_path), os.path.getsize(out_path))
