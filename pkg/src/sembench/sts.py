"""STS pair datasets, Spearman correlation, and model evaluation reports.

A dataset is a directory of TSV subsets (gold<TAB>sentence1<TAB>sentence2,
gold in [0, 5]). Evaluation scores every pair by the cosine similarity of
pooled sentence embeddings (dropout disabled) and reports Spearman's rho
under two aggregation modes: "concat" ranks all subsets jointly, "average"
computes rho per subset and takes the unweighted mean.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    EmptyDatasetError,
    UndefinedCorrelationError,
)

log = logging.getLogger(__name__)

MODE_CONCAT = "concat"
MODE_AVERAGE = "average"
MODES = (MODE_CONCAT, MODE_AVERAGE)


@dataclass
class StsPair:
    sentence1: str
    sentence2: str
    gold: float

    def __post_init__(self):
        if not 0.0 <= self.gold <= 5.0:
            raise DomainError(f"gold score must be in [0, 5], got {self.gold}")


@dataclass
class StsDataset:
    name: str
    subsets: dict[str, list[StsPair]]

    @property
    def n_pairs(self) -> int:
        return sum(len(p) for p in self.subsets.values())


@dataclass
class EvalReport:
    per_dataset: dict[str, float]  # Spearman rho in [-1, 1]
    average: float
    mode: str
    pooling: str
    model_id: str = "model"

    def rho100(self, name: str) -> float:
        return 100.0 * self.per_dataset[name]


def load_sts(dir_path) -> StsDataset:
    """Load every *.tsv in a directory as one subset each.

    Malformed rows (wrong field count, non-numeric or out-of-range gold) are
    skipped and counted in a single warning.
    """
    subsets: dict[str, list[StsPair]] = {}
    skipped = 0
    for fname in sorted(os.listdir(dir_path)):
        if not fname.endswith(".tsv"):
            continue
        pairs: list[StsPair] = []
        with open(os.path.join(dir_path, fname), encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    skipped += 1
                    continue
                try:
                    gold = float(parts[0])
                except ValueError:
                    skipped += 1
                    continue
                if not 0.0 <= gold <= 5.0:
                    skipped += 1
                    continue
                pairs.append(StsPair(parts[1], parts[2], gold))
        if pairs:
            subsets[fname[:-4]] = pairs
    if skipped:
        warnings.warn(f"skipped {skipped} malformed STS rows in {dir_path}")
    if not subsets:
        raise EmptyDatasetError(f"no parsable STS rows under {dir_path}")
    return StsDataset(os.path.basename(os.path.normpath(str(dir_path))), subsets)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based); ties get the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sv = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman's rho: Pearson correlation of average-tie fractional ranks."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DomainError("spearman needs at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("correlation undefined for constant input")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    return float((dx @ dy) / np.sqrt((dx @ dx) * (dy @ dy)))


def aggregate_spearman(per_subset: list[tuple[np.ndarray, np.ndarray]],
                       mode: str) -> float:
    """Combine (gold, predicted) subset score arrays into one rho.

    concat: one joint ranking over all subsets. average: unweighted mean of
    per-subset rhos.
    """
    if mode not in MODES:
        raise DomainError(f"unknown aggregation mode {mode!r}")
    if mode == MODE_CONCAT:
        gold = np.concatenate([g for g, _ in per_subset])
        pred = np.concatenate([p for _, p in per_subset])
        return spearman(gold, pred)
    return float(np.mean([spearman(g, p) for g, p in per_subset]))


def embed_sentences(model, vocab, sentences: list[str], pooling,
                    batch_size: int = 128) -> np.ndarray:
    """Pooled embeddings for raw sentences, dropout disabled."""
    from .corpus import pack_batch, tokenize
    from .encoder import encode
    from .pooling import pool

    out = []
    for start in range(0, len(sentences), batch_size):
        chunk = sentences[start:start + batch_size]
        batch = pack_batch([tokenize(s, vocab, model.config.max_seq_len)
                            for s in chunk])
        out.append(pool(encode(model, batch, training=False), pooling))
    return np.concatenate(out, axis=0)


def score_pairs(model, vocab, pairs: list[StsPair], pooling) -> np.ndarray:
    """Cosine similarity of the two pooled embeddings of every pair."""
    e1 = embed_sentences(model, vocab, [p.sentence1 for p in pairs], pooling)
    e2 = embed_sentences(model, vocab, [p.sentence2 for p in pairs], pooling)
    n1 = np.linalg.norm(e1, axis=1)
    n2 = np.linalg.norm(e2, axis=1)
    return np.einsum("ij,ij->i", e1, e2) / (n1 * n2 + 1e-8)


def evaluate(model, vocab, datasets, pooling, mode: str = MODE_CONCAT,
             model_id: str = "model") -> EvalReport:
    """Score one or more StsDatasets and report rho per dataset plus average."""
    if isinstance(datasets, StsDataset):
        datasets = [datasets]
    if mode not in MODES:
        raise DomainError(f"unknown aggregation mode {mode!r}")
    per_dataset: dict[str, float] = {}
    for ds in datasets:
        per_subset = []
        for pairs in ds.subsets.values():
            gold = np.array([p.gold for p in pairs], dtype=np.float64)
            pred = score_pairs(model, vocab, pairs, pooling)
            per_subset.append((gold, pred.astype(np.float64)))
        per_dataset[ds.name] = aggregate_spearman(per_subset, mode)
    average = float(np.mean(list(per_dataset.values())))
    return EvalReport(per_dataset, average, mode, pooling.name, model_id)


def report_csv_lines(report: EvalReport) -> list[str]:
    """CSV form, rho x 100: one row per dataset plus the average row."""
    lines = ["dataset,rho100"]
    for name, rho in report.per_dataset.items():
        lines.append(f"{name},{100.0 * rho:.2f}")
    lines.append(f"average,{100.0 * report.average:.2f}")
    return lines


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_csv_lines(report)) + "\n")


def format_report_table(report: EvalReport) -> str:
    """Aligned text table with rho x 100 to 2 decimals."""
    rows = [(name, f"{100.0 * rho:.2f}") for name, rho in report.per_dataset.items()]
    rows.append(("average", f"{100.0 * report.average:.2f}"))
    width = max(len(name) for name, _ in rows)
    header = (f"model={report.model_id}  pooling={report.pooling}  "
              f"mode={report.mode}")
    body = [f"{name.ljust(width)}  {value:>7}" for name, value in rows]
    return "\n".join([header, f"{'dataset'.ljust(width)}  {'rho*100':>7}"] + body)
