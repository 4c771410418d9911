"""Binary checkpoint container.

Layout (all little-endian):

    magic   4 bytes  "DFCE"
    version u32      1
    config  7 x u32  vocab_size, hidden_dim, n_layers, n_heads, ffn_dim,
                     max_seq_len, dropout_rate in microunits (rate * 1e6)
    then per tensor:
    name_len u16, name UTF-8, dtype u8 (0 = f32, 1 = int8 + leading f32
    scale), rank u8, dims u32 each, payload.

Tensors are stored in model parameter order. `load_checkpoint` dequantizes
int8 records transparently; `read_records` keeps the raw payloads so the
quantizer can rewrite files without a decode round trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, EncoderModel
from .errors import CheckpointFormatError
from .numerics import TRAIN32

MAGIC = b"DFCE"
VERSION = 1
DTYPE_F32 = 0
DTYPE_INT8 = 1
_RATE_SCALE = 1_000_000  # dropout_rate stored as u32 microunits


@dataclass
class TensorRecord:
    name: str
    dtype: int
    shape: tuple[int, ...]
    data: np.ndarray          # float32 array, or int8 array for DTYPE_INT8
    scale: float | None = None

    def payload_bytes(self) -> int:
        if self.dtype == DTYPE_INT8:
            return 4 + self.data.size
        return 4 * self.data.size


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return buf


def write_records(path, config: EncoderConfig, records: list[TensorRecord]) -> int:
    """Write a checkpoint file; returns its byte count."""
    total = 0
    with open(path, "wb") as fh:
        def put(buf: bytes):
            nonlocal total
            fh.write(buf)
            total += len(buf)

        put(MAGIC)
        put(struct.pack("<I", VERSION))
        put(struct.pack("<7I", config.vocab_size, config.hidden_dim,
                        config.n_layers, config.n_heads, config.ffn_dim,
                        config.max_seq_len, round(config.dropout_rate * _RATE_SCALE)))
        for rec in records:
            name = rec.name.encode("utf-8")
            put(struct.pack("<H", len(name)))
            put(name)
            put(struct.pack("<BB", rec.dtype, len(rec.shape)))
            put(struct.pack(f"<{len(rec.shape)}I", *rec.shape))
            if rec.dtype == DTYPE_INT8:
                put(struct.pack("<f", rec.scale))
                put(np.ascontiguousarray(rec.data, dtype=np.int8).tobytes())
            elif rec.dtype == DTYPE_F32:
                put(np.ascontiguousarray(rec.data, dtype="<f4").tobytes())
            else:
                raise CheckpointFormatError(f"unknown dtype code {rec.dtype}")
    return total


def read_records(path) -> tuple[EncoderConfig, list[TensorRecord]]:
    """Parse a checkpoint into its config and raw tensor records."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointFormatError(f"bad magic in {path}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        fields = struct.unpack("<7I", _read_exact(fh, 28, "config"))
        config = EncoderConfig(vocab_size=fields[0], hidden_dim=fields[1],
                               n_layers=fields[2], n_heads=fields[3],
                               ffn_dim=fields[4], max_seq_len=fields[5],
                               dropout_rate=fields[6] / _RATE_SCALE)
        records: list[TensorRecord] = []
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise CheckpointFormatError("truncated checkpoint while reading name length")
            (name_len,) = struct.unpack("<H", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            dtype, rank = struct.unpack("<BB", _read_exact(fh, 2, "tensor header"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            count = int(np.prod(shape)) if rank else 1
            if dtype == DTYPE_INT8:
                (scale,) = struct.unpack("<f", _read_exact(fh, 4, "scale"))
                raw = _read_exact(fh, count, f"payload of {name}")
                data = np.frombuffer(raw, dtype=np.int8).reshape(shape)
                records.append(TensorRecord(name, dtype, shape, data, scale))
            elif dtype == DTYPE_F32:
                raw = _read_exact(fh, 4 * count, f"payload of {name}")
                data = np.frombuffer(raw, dtype="<f4").reshape(shape)
                records.append(TensorRecord(name, dtype, shape, data))
            else:
                raise CheckpointFormatError(f"unknown dtype code {dtype} for {name}")
    return config, records


def save_checkpoint(model: EncoderModel, path) -> int:
    """Write the model as f32 records; returns the byte count."""
    records = [TensorRecord(name, DTYPE_F32, arr.shape,
                            np.asarray(arr, dtype=np.float32))
               for name, arr in model.params.items()]
    return write_records(path, model.config, records)


def dequantize_record(rec: TensorRecord) -> np.ndarray:
    if rec.dtype == DTYPE_INT8:
        return (rec.data.astype(np.float32) * np.float32(rec.scale)).reshape(rec.shape)
    # astype(copy=True) so loaded parameters are writable (frombuffer is not)
    return rec.data.astype(np.float32, copy=True)


def load_checkpoint(path) -> EncoderModel:
    """Load a checkpoint, dequantizing int8 records transparently."""
    config, records = read_records(path)
    params = {rec.name: dequantize_record(rec) for rec in records}
    return EncoderModel(config, params, TRAIN32)
