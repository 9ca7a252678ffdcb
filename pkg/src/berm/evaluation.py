"""AUC, F1 and false-negative rate against binary relevance labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC, ties counted as half, via average ranks."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # average 1-based rank of each tie block
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    block_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(block_rank, ends - starts)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


def confusion(scores, labels, threshold: float = 0.5) -> Confusion:
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    s, y = _check(scores, labels)
    pred = s >= threshold
    return Confusion(int(np.sum(pred & (y == 1))), int(np.sum(pred & (y == 0))),
                     int(np.sum(~pred & (y == 0))), int(np.sum(~pred & (y == 1))))


def f1(scores, labels, threshold: float = 0.5) -> float:
    c = confusion(scores, labels, threshold)
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def fnr(scores, labels, threshold: float = 0.5) -> float:
    """Share of relevant pairs scored below ``threshold``."""
    c = confusion(scores, labels, threshold)
    if c.tp + c.fn == 0:
        raise ValueError("FNR is undefined without positive labels")
    return c.fn / (c.fn + c.tp)


@dataclass(frozen=True)
class EvalReport:
    auc: float
    f1: float
    fnr: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    n: int

    CSV_HEADER = "auc,f1,fnr,threshold,tp,fp,tn,fn,n"

    def csv_row(self) -> str:
        return (f"{self.auc!r},{self.f1!r},{self.fnr!r},{self.threshold!r},"
                f"{self.tp},{self.fp},{self.tn},{self.fn},{self.n}")

    def pretty(self) -> str:
        return (f"AUC {self.auc:.4f}  F1 {self.f1:.4f}  FNR {self.fnr:.4f}  "
                f"(threshold {self.threshold:g}; TP {self.tp} FP {self.fp} "
                f"TN {self.tn} FN {self.fn}; n={self.n})")


def evaluate_scores(scores, labels, threshold: float = 0.5) -> EvalReport:
    c = confusion(scores, labels, threshold)
    n = c.tp + c.fp + c.tn + c.fn
    return EvalReport(auc(scores, labels), f1(scores, labels, threshold),
                      fnr(scores, labels, threshold), threshold, c.tp, c.fp, c.tn, c.fn, n)


def evaluate(scorer: Callable[[Sequence[tuple[str, str]]], np.ndarray],
             pairs: Sequence[tuple[str, str]], labels, threshold: float = 0.5) -> EvalReport:
    """Score ``pairs`` with ``scorer`` (a batch function) and report metrics."""
    if not pairs:
        raise ValueError("empty test set")
    return evaluate_scores(np.asarray(scorer(pairs), dtype=np.float64), labels, threshold)
