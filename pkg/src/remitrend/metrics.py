"""Change-vs-no-change metrics computed from regression scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RocCurve",
    "PrCurve",
    "OperatingPoint",
    "binarize",
    "roc_curve",
    "pr_curve",
    "auroc",
    "auroc_columns",
    "auprc",
    "youden_point",
    "write_roc_csv",
    "write_pr_csv",
]

POSITIVE_TOL = 1e-9


def binarize(labels) -> np.ndarray:
    """True where ``|label| > 1e-9``."""
    return np.abs(np.asarray(labels, dtype=float)) > POSITIVE_TOL


def _as_binary(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype == bool:
        return labels
    return binarize(labels)


def _check(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = _as_binary(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def _tie_groups(scores, labels):
    """Per distinct score (descending): positives and negatives in the group."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    starts = np.concatenate([[0], np.flatnonzero(s[1:] != s[:-1]) + 1])
    pos = np.add.reduceat(y.astype(np.int64), starts) if len(s) else np.zeros(0, np.int64)
    size = np.diff(np.concatenate([starts, [len(s)]]))
    return s[starts], pos, size - pos


@dataclass(frozen=True, eq=False)
class RocCurve:
    """ROC points for thresholds ``score >= threshold``, thresholds decreasing.

    The first point (threshold ``+inf``) is ``(0, 0)`` and the last is
    ``(1, 1)``. Tied scores form a single point.
    """

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int
    n_neg: int
    ties_grouped: bool = True

    @property
    def sensitivity(self):
        return self.tpr

    @property
    def specificity(self):
        return 1.0 - self.fpr


@dataclass(frozen=True, eq=False)
class PrCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    sensitivity: float
    specificity: float
    precision: float

    @property
    def youden(self) -> float:
        return self.sensitivity + self.specificity - 1.0


def roc_curve(scores, labels) -> RocCurve:
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    thr, pos, neg = _tie_groups(s, y)
    tp = np.concatenate([[0], np.cumsum(pos)])
    fp = np.concatenate([[0], np.cumsum(neg)])
    return RocCurve(
        np.concatenate([[np.inf], thr]), tp / n_pos, fp / n_neg, tp, fp, n_pos, n_neg
    )


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    _, pos, neg = _tie_groups(s, y)
    # negatives strictly below each group, walking from the highest score
    neg_below = n_neg - np.cumsum(neg)
    wins = float(np.dot(pos, neg_below)) + 0.5 * float(np.dot(pos, neg))
    return wins / (n_pos * n_neg)


def auroc_columns(score_matrix, labels) -> np.ndarray:
    """AUROC of every column of ``score_matrix`` against the same labels.

    The larger class is sorted per column and the smaller one located in it
    by binary search, which is exact (ties get half credit) and cheap at low
    prevalence.
    """
    S = np.asarray(score_matrix, dtype=float)
    y = _as_binary(labels)
    if S.ndim != 2 or S.shape[0] != len(y):
        raise ValueError("score_matrix must be (n, m) with n = len(labels)")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    flip = n_pos > n_neg
    query = np.ascontiguousarray(S[~y if flip else y].T)
    ref = np.sort(S[y if flip else ~y].T, axis=1)
    below = np.empty(S.shape[1])
    for j in range(S.shape[1]):
        lo = np.searchsorted(ref[j], query[j], side="left")
        hi = np.searchsorted(ref[j], query[j], side="right")
        below[j] = lo.sum() + 0.5 * (hi - lo).sum()
    frac = below / (n_pos * n_neg)
    return 1.0 - frac if flip else frac


def pr_curve(scores, labels) -> PrCurve:
    """Precision and recall per distinct threshold (decreasing)."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("precision-recall needs at least one positive")
    thr, pos, neg = _tie_groups(s, y)
    tp = np.cumsum(pos)
    fp = np.cumsum(neg)
    return PrCurve(thr, tp / (tp + fp), tp / n_pos)


def auprc(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve.

    Each recall increment is weighted by the precision at the threshold where
    it is reached (average precision), with tied scores entering together.
    """
    curve = pr_curve(scores, labels)
    d_recall = np.diff(np.concatenate([[0.0], curve.recall]))
    return float(np.dot(d_recall, curve.precision))


def youden_point(roc: RocCurve) -> OperatingPoint:
    """Threshold maximizing sensitivity + specificity - 1.

    Ties go to the higher specificity. Precision with no predicted positives
    is reported as 1.
    """
    j = roc.tpr - roc.fpr
    best = j.max()
    cand = np.flatnonzero(j >= best - 1e-15)
    k = cand[np.argmin(roc.fpr[cand])]
    predicted = roc.tp[k] + roc.fp[k]
    precision = roc.tp[k] / predicted if predicted > 0 else 1.0
    return OperatingPoint(float(roc.thresholds[k]), float(roc.tpr[k]), float(1.0 - roc.fpr[k]),
                          float(precision))


def write_roc_csv(roc: RocCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "tpr", "fpr"])
        for t, a, b in zip(roc.thresholds, roc.tpr, roc.fpr):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def write_pr_csv(curve: PrCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
            w.writerow([repr(float(t)), repr(float(p)), repr(float(r))])
