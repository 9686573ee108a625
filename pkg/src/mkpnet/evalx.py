"""Metrics, approximate-randomization significance and ablation reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

COLUMNS = ("config", "acc", "f1", "coarse_acc", "coarse_f1", "delta_acc", "delta_f1")


def _check_lengths(gold, pred):
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")


def accuracy(gold: Sequence, pred: Sequence) -> float:
    _check_lengths(gold, pred)
    if not gold:
        raise ValueError("accuracy of an empty list is undefined")
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)


def per_label_f1(gold: Sequence, pred: Sequence, labels: Sequence) -> dict:
    _check_lengths(gold, pred)
    out = {}
    for lab in labels:
        tp = sum(g == lab and p == lab for g, p in zip(gold, pred))
        fp = sum(g != lab and p == lab for g, p in zip(gold, pred))
        fn = sum(g == lab and p != lab for g, p in zip(gold, pred))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out[lab] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return out


def macro_f1(gold: Sequence, pred: Sequence, labels: Sequence) -> float:
    """Unweighted mean of per-label F1 over ``labels``.  A label with
    precision + recall = 0 scores 0, including labels absent from both lists."""
    labels = list(labels)
    missing = set(gold) - set(labels)
    if missing:
        raise ValueError(f"gold labels not covered by label set: {sorted(missing)}")
    scores = per_label_f1(gold, pred, labels)
    return sum(scores.values()) / len(labels)


def micro_f1(gold: Sequence, pred: Sequence, labels: Sequence) -> float:
    # single-label multi-class: micro precision == micro recall == accuracy
    # restricted to the label set
    labels = set(labels)
    _check_lengths(gold, pred)
    tp = sum(g == p and g in labels for g, p in zip(gold, pred))
    n_pred = sum(p in labels for p in pred)
    n_gold = sum(g in labels for g in gold)
    prec = tp / n_pred if n_pred else 0.0
    rec = tp / n_gold if n_gold else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


def significance(gold: Sequence, pred_a: Sequence, pred_b: Sequence, iterations: int = 10000,
                 seed: int = 0) -> float:
    """Two-sided approximate randomization test on the accuracy difference.

    Each iteration swaps the two systems' outputs on every item with
    probability 1/2; the p-value is ``(r + 1) / (iterations + 1)`` where
    ``r`` counts shuffles at least as extreme as the observed difference.
    """
    _check_lengths(gold, pred_a)
    _check_lengths(gold, pred_b)
    if iterations < 1000:
        raise ValueError(f"need at least 1000 iterations, got {iterations}")
    gold = list(gold)
    a = np.array([g == p for g, p in zip(gold, pred_a)], dtype=np.int64)
    b = np.array([g == p for g, p in zip(gold, pred_b)], dtype=np.int64)
    observed = abs(int(a.sum()) - int(b.sum()))
    diff = a - b
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    hits = 0
    chunk = 1000
    for start in range(0, iterations, chunk):
        n = min(chunk, iterations - start)
        signs = rng.integers(0, 2, size=(n, len(gold)), dtype=np.int8) * 2 - 1
        stats = np.abs(signs @ diff)
        hits += int((stats >= observed).sum())
    return (hits + 1) / (iterations + 1)


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalRow:
    config: str
    acc: float
    f1: float
    coarse_acc: float | None = None
    coarse_f1: float | None = None
    delta_acc: float | None = None
    delta_f1: float | None = None
    micro_f1: float | None = None


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    baseline: str | None = None

    def row(self, name: str) -> EvalRow:
        for r in self.rows:
            if r.config == name:
                return r
        raise KeyError(name)

    def add(self, row: EvalRow):
        for v in (row.acc, row.f1, row.coarse_acc, row.coarse_f1):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{row.config}: metric {v} outside [0, 1]")
        self.rows.append(row)

    def compute_deltas(self, baseline: str):
        base = self.row(baseline)
        self.baseline = baseline
        for r in self.rows:
            r.delta_acc = r.acc - base.acc
            r.delta_f1 = r.f1 - base.f1

    def to_tsv(self) -> str:
        def fmt(v):
            return "" if v is None else (v if isinstance(v, str) else f"{v:.4f}")

        lines = ["\t".join(COLUMNS)]
        for r in self.rows:
            lines.append("\t".join(fmt(getattr(r, c)) for c in COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"baseline": self.baseline, "rows": [r.__dict__ for r in self.rows]},
                          indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls([EvalRow(**r) for r in d["rows"]], d["baseline"])
