"""Patient-grouped inner cross-validation of the LASSO penalty.

All inner fits of one data set share additive sufficient statistics
(counts, sums and cross-products per fold), so refitting on any column
subset costs O(p^2) rather than O(n p^2). This is what makes recursive
elimination affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..metrics import auroc_columns, binarize
from ._lars import LarsPath, coefficients_at, lars_path_gram
from ._standardize import inactive_columns

__all__ = [
    "DegenerateFoldsError",
    "patient_kfold",
    "InnerCV",
    "LambdaSelection",
    "select_lambda",
]


class DegenerateFoldsError(ValueError):
    """Every validation fold lacked one of the two classes."""


def patient_kfold(patient_ids, k: int, seed: int = 0) -> list:
    """Shuffled partition of distinct patient ids into ``k`` near-equal groups.

    Returns ``(train_ids, test_ids)`` pairs of sorted id arrays.
    """
    ids = np.unique(np.asarray(patient_ids, dtype=object).astype(str))
    if k < 2:
        raise ValueError("need at least two folds")
    if len(ids) < k:
        raise ValueError(f"{len(ids)} distinct patients cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    groups = np.array_split(ids[rng.permutation(len(ids))], k)
    return [(np.sort(np.setdiff1d(ids, g)), np.sort(g)) for g in groups]


def fold_assignment(patient_ids, k: int, seed: int = 0) -> np.ndarray:
    """Fold number of every row, with whole patients per fold."""
    pids = np.asarray(patient_ids, dtype=object).astype(str)
    out = np.empty(len(pids), dtype=np.int64)
    for f, (_, test) in enumerate(patient_kfold(pids, k, seed)):
        out[np.isin(pids, test)] = f
    return out


@dataclass
class _Moments:
    n: int
    sx: np.ndarray
    sy: float
    xx: np.ndarray
    xy: np.ndarray

    def __sub__(self, other):
        return _Moments(self.n - other.n, self.sx - other.sx, self.sy - other.sy,
                        self.xx - other.xx, self.xy - other.xy)


@dataclass
class _StdSystem:
    """Standardized normal equations for a column subset."""

    cols: np.ndarray      # subset column indices (into the full matrix)
    active: np.ndarray    # mask over ``cols``
    mean: np.ndarray      # original-scale column means
    scale: np.ndarray
    y_mean: float
    gram: np.ndarray      # active x active
    xty: np.ndarray
    n: int

    def path(self) -> LarsPath:
        k = int(self.active.sum())
        return lars_path_gram(self.gram, self.xty, self.n, max_active=min(self.n - 1, k))


@dataclass
class LambdaSelection:
    alpha: float
    score: float
    grid: np.ndarray
    fold_scores: np.ndarray  # (n_folds, n_grid), nan for skipped folds
    skipped: tuple = ()


class InnerCV:
    """Grouped k-fold engine over a fixed design matrix.

    Parameters
    ----------
    X, y : arrays
        Training rows. Columns can later be subset freely.
    groups : array
        Patient id per row; folds never split a patient.
    n_folds, seed :
        Inner fold layout, as in :func:`patient_kfold`.
    """

    def __init__(self, X, y, groups, n_folds: int = 3, seed: int = 0,
                 max_lambdas: int = 100, scorer: Optional[Callable] = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.n_folds = n_folds
        self.max_lambdas = max_lambdas
        self.scorer = scorer
        self.fold = fold_assignment(groups, n_folds, seed)
        self.shift = X.mean(axis=0)
        self.y_shift = float(y.mean())
        self.Xc = X - self.shift
        yc = y - self.y_shift
        self.y = y
        self.binary = binarize(y)
        self.fold_rows = [np.flatnonzero(self.fold == f) for f in range(n_folds)]
        self.fold_X = [self.Xc[rows] for rows in self.fold_rows]
        self.fold_moments = []
        for rows in self.fold_rows:
            Xf, yf = self.Xc[rows], yc[rows]
            self.fold_moments.append(
                _Moments(len(rows), Xf.sum(axis=0), float(yf.sum()), Xf.T @ Xf, Xf.T @ yf)
            )
        total = self.fold_moments[0]
        for m in self.fold_moments[1:]:
            total = _Moments(total.n + m.n, total.sx + m.sx, total.sy + m.sy,
                             total.xx + m.xx, total.xy + m.xy)
        self.total = total

    @property
    def n_features(self) -> int:
        return self.Xc.shape[1]

    def _system(self, mom: _Moments, cols) -> _StdSystem:
        cols = np.asarray(cols, dtype=np.int64)
        n = mom.n
        m = mom.sx[cols] / n
        my = mom.sy / n
        cov = mom.xx[np.ix_(cols, cols)] - n * np.outer(m, m)
        var = np.maximum(np.diag(cov), 0.0) / (n - 1)
        sd = np.sqrt(var)
        mean = self.shift[cols] + m
        active = ~inactive_columns(mean, sd)
        scale = np.where(active, sd, 1.0)
        a = np.flatnonzero(active)
        gram = cov[np.ix_(a, a)] / np.outer(scale[a], scale[a])
        xty = (mom.xy[cols[a]] - n * m[a] * my) / scale[a]
        return _StdSystem(cols, active, mean, scale, self.y_shift + my, gram, xty, n)

    def system(self, cols, fold: Optional[int] = None) -> _StdSystem:
        mom = self.total if fold is None else self.total - self.fold_moments[fold]
        return self._system(mom, cols)

    def _grid(self, paths) -> np.ndarray:
        alphas = np.unique(np.concatenate([p.alphas for p in paths]))[::-1]
        if len(alphas) <= self.max_lambdas:
            return alphas
        positive = alphas[alphas > 0]
        hi, lo = positive.max(), positive.min()
        return np.geomspace(hi, lo, self.max_lambdas)

    def _score_matrix(self, preds, truth):
        if self.scorer is None:
            return auroc_columns(preds, truth)
        return np.array([self.scorer(preds[:, j], truth) for j in range(preds.shape[1])])

    def select(self, cols) -> LambdaSelection:
        """Grid of penalties from the inner paths and their mean AUROC."""
        systems = [self.system(cols, f) for f in range(self.n_folds)]
        paths = [s.path() for s in systems]
        grid = self._grid(paths)
        scores = np.full((self.n_folds, len(grid)), np.nan)
        skipped = []
        for f, (sys, path) in enumerate(zip(systems, paths)):
            rows = self.fold_rows[f]
            truth = self.binary[rows]
            if truth.all() or not truth.any():
                skipped.append(f)
                continue
            B = coefficients_at(path, grid * sys.n)            # (m, k_active)
            raw = B / sys.scale[sys.active]
            preds = self.fold_X[f][:, sys.cols[sys.active]] @ raw.T   # intercept irrelevant
            scores[f] = self._score_matrix(preds, truth)
        if len(skipped) == self.n_folds:
            raise DegenerateFoldsError("every inner validation fold is single-class")
        mean = np.nanmean(scores, axis=0)
        best = np.max(mean)
        # grid is decreasing: the first maximizer is the sparsest
        k = int(np.flatnonzero(mean >= best - 1e-12)[0])
        return LambdaSelection(float(grid[k]), float(mean[k]), grid, scores, tuple(skipped))

    def fit(self, cols, alpha: float):
        """Coefficients on all rows at penalty ``alpha`` (per-sample scale).

        Returns ``(system, path, standardized coefficients over cols)``.
        """
        sys = self.system(cols)
        path = sys.path()
        beta = np.zeros(len(sys.cols))
        beta[sys.active] = coefficients_at(path, alpha * sys.n)
        return sys, path, beta


def select_lambda(X, y, patient_ids, k_inner: int = 3, scorer=None, seed: int = 0,
                  max_lambdas: int = 100) -> LambdaSelection:
    """Choose the LASSO penalty by patient-grouped inner cross-validation.

    The candidate grid is the union of knots of the inner-training paths
    (subsampled geometrically to ``max_lambdas`` values). The returned
    ``alpha`` is on the per-sample scale ``lambda / n``; the LARS-native
    penalty on ``n`` rows is ``alpha * n``. Ties go to the larger penalty.
    ``scorer(scores, binary_labels)`` defaults to AUROC.
    """
    y = np.asarray(y, dtype=float)
    if not binarize(y).any():
        raise DegenerateFoldsError("labels contain no positive (nonzero) value")
    if len(np.unique(np.asarray(patient_ids, dtype=object).astype(str))) < k_inner:
        raise ValueError(f"need at least {k_inner} distinct patients")
    cv = InnerCV(X, y, patient_ids, k_inner, seed, max_lambdas, scorer)
    return cv.select(np.arange(cv.n_features))
