"""Trend features over observation windows, outlier filtering and
polynomial augmentation."""

from __future__ import annotations

import csv
import itertools
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data_model import FeatureMatrix, PatientRecord, Segment, SignalKind

logger = logging.getLogger(__name__)

__all__ = [
    "TrendFeatures",
    "FEATURE_SIGNALS",
    "STATIC_FEATURES",
    "BASE_FEATURE_NAMES",
    "fit_trend",
    "trend_batch",
    "build_features",
    "build_feature_matrix",
    "ZScoreFilter",
    "zscore_filter",
    "PolynomialAugmenter",
    "polynomial_augment",
    "polynomial_names",
    "write_feature_matrix_csv",
    "read_feature_matrix_csv",
]

FEATURE_SIGNALS = (
    SignalKind.BIS,
    SignalKind.HR,
    SignalKind.DAP,
    SignalKind.SAP,
    SignalKind.MAP,
    SignalKind.REMI_TARGET,
)
STATIC_FEATURES = ("age", "bmi", "asa")
BASE_FEATURE_NAMES = tuple(
    f"{kind.value}_{part}" for kind in FEATURE_SIGNALS for part in ("intercept", "slope", "std")
) + STATIC_FEATURES


@dataclass(frozen=True)
class TrendFeatures:
    intercept: float
    slope: float
    resid_std: float


def fit_trend(timestamps, values) -> TrendFeatures:
    """Least-squares line through ``values`` against minutes since window start.

    The intercept is the fitted value at the first timestamp, the slope is in
    units per minute and ``resid_std`` is the population (1/n) standard
    deviation of the residuals.
    """
    t = np.asarray(timestamps, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("timestamps and values must be 1-d arrays of equal length")
    if len(t) < 2:
        raise ValueError("fit_trend needs at least two samples")
    x = (t - t[0]) / 60.0
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx <= 0.0:
        raise ValueError("fit_trend needs at least two distinct timestamps")
    y_mean = float(np.mean(y))
    slope = float(np.dot(xc, y - y_mean) / sxx)
    intercept = y_mean - slope * float(x.mean())
    resid = y - (intercept + slope * x)
    return TrendFeatures(intercept, slope, float(np.sqrt(np.mean(resid * resid))))


def trend_batch(rel_times, windows):
    """Vectorised :func:`fit_trend` for windows sharing sample times.

    ``windows`` has shape ``(n_windows, n_samples)``; ``rel_times`` are the
    common sample times in seconds from window start. Returns three arrays.
    """
    x = np.asarray(rel_times, dtype=float) / 60.0
    y = np.asarray(windows, dtype=float)
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if len(x) < 2 or sxx <= 0.0:
        raise ValueError("trend_batch needs at least two distinct sample times")
    y_mean = y.mean(axis=1)
    slope = (y - y_mean[:, None]) @ xc / sxx
    intercept = y_mean - slope * x.mean()
    resid = y - (intercept[:, None] + slope[:, None] * x[None, :])
    return intercept, slope, np.sqrt(np.mean(resid * resid, axis=1))


def _window_mask(series, segment):
    ts = series.timestamps
    return (ts >= segment.obs_start - 1e-9) & (ts <= segment.obs_end + 1e-9)


def build_features(segment: Segment, record: PatientRecord) -> dict:
    """The 21 named features of one segment, in ``BASE_FEATURE_NAMES`` order."""
    out = {}
    for kind in FEATURE_SIGNALS:
        series = record[kind]
        mask = _window_mask(series, segment)
        if mask.sum() < 2:
            raise ValueError(
                f"{kind.value} has {int(mask.sum())} samples in window "
                f"[{segment.obs_start}, {segment.obs_end}] of patient {record.id}"
            )
        trend = fit_trend(series.timestamps[mask], series.values[mask])
        out[f"{kind.value}_intercept"] = trend.intercept
        out[f"{kind.value}_slope"] = trend.slope
        out[f"{kind.value}_std"] = trend.resid_std
    st = record.statics
    out["age"] = float(st.age)
    out["bmi"] = float(st.bmi)
    out["asa"] = float(st.asa)
    return {name: out[name] for name in BASE_FEATURE_NAMES}


def _record_block(record: PatientRecord, segments: Sequence[Segment]):
    """Feature rows for all segments of one record; fast path on a grid."""
    step = record.grid_step()
    lens = {round(s.obs_end - s.obs_start, 6) for s in segments}
    if step is None or len(lens) != 1:
        rows, keep = [], []
        for i, seg in enumerate(segments):
            try:
                rows.append(list(build_features(seg, record).values()))
                keep.append(i)
            except ValueError as exc:
                logger.info("skipped segment: %s", exc)
        return np.array(rows, dtype=float).reshape(len(rows), len(BASE_FEATURE_NAMES)), keep

    obs_len = lens.pop()
    t0 = float(record[SignalKind.SAP].timestamps[0])
    m = int(np.floor(obs_len / step + 1e-9)) + 1
    starts = np.array([s.obs_start for s in segments])
    first = np.ceil((starts - t0) / step - 1e-9).astype(np.int64)
    n_grid = len(record[SignalKind.SAP].timestamps)
    last = first + m - 1
    valid = (first >= 0) & (last < n_grid)
    if m < 2:
        valid[:] = False
    keep = np.flatnonzero(valid)
    for i in np.flatnonzero(~valid):
        logger.info("skipped segment at %s of patient %s: window off grid or too short",
                    segments[i].obs_start, record.id)
    block = np.empty((len(keep), len(BASE_FEATURE_NAMES)))
    if len(keep) == 0:
        return block, []
    index = first[keep, None] + np.arange(m)[None, :]
    rel = np.arange(m) * step
    col = 0
    for kind in FEATURE_SIGNALS:
        values = np.asarray(record[kind].values)[index]
        intercept, slope, sd = trend_batch(rel, values)
        block[:, col], block[:, col + 1], block[:, col + 2] = intercept, slope, sd
        col += 3
    st = record.statics
    block[:, col:] = [float(st.age), float(st.bmi), float(st.asa)]
    return block, list(keep)


def build_feature_matrix(segments: Sequence[Segment], records) -> FeatureMatrix:
    """Feature matrix for ``segments``; ``records`` maps (or lists) by patient id.

    Segments whose windows cannot be featurised are skipped and logged.
    """
    if not isinstance(records, Mapping):
        records = {r.id: r for r in records}
    by_patient = {}
    for i, seg in enumerate(segments):
        by_patient.setdefault(seg.patient_id, []).append(i)
    blocks, labels, ids, order = [], [], [], []
    for pid in sorted(by_patient):
        idx = by_patient[pid]
        segs = [segments[i] for i in idx]
        block, keep = _record_block(records[pid], segs)
        blocks.append(block)
        labels.extend(segs[k].label for k in keep)
        ids.extend([pid] * len(keep))
        order.extend(idx[k] for k in keep)
    if not blocks:
        return FeatureMatrix(BASE_FEATURE_NAMES, np.empty((0, len(BASE_FEATURE_NAMES))), [], [])
    rows = np.vstack(blocks)
    # restore the caller's segment order
    perm = np.argsort(np.asarray(order), kind="stable")
    return FeatureMatrix(
        BASE_FEATURE_NAMES, rows[perm], np.asarray(labels)[perm], np.asarray(ids, dtype=object)[perm]
    )


# ----------------------------------------------------------------- z-score


class ZScoreFilter(TransformerMixin, BaseEstimator):
    """Outlier guard with training-set column statistics.

    ``fit`` freezes per-column mean and sample standard deviation;
    :meth:`outlier_mask` flags rows with any ``|z| > threshold`` (training
    rows are dropped), and :meth:`transform` clamps values to
    ``mean +/- threshold * sd`` so that every test row stays scoreable.
    Zero-variance columns are ignored.
    """

    def __init__(self, threshold=5.0):
        self.threshold = threshold

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[0] < 2:
            raise ValueError("ZScoreFilter needs at least two rows")
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0, ddof=1)
        self.active_ = self.scale_ > 1e-12 * (1.0 + np.abs(self.mean_))
        self.n_features_in_ = X.shape[1]
        return self

    def zscores(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=float)
        z = np.zeros_like(X)
        a = self.active_
        z[:, a] = (X[:, a] - self.mean_[a]) / self.scale_[a]
        return z

    def outlier_mask(self, X):
        return np.any(np.abs(self.zscores(X)) > self.threshold, axis=1)

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=float, copy=True)
        a = self.active_
        lo = self.mean_[a] - self.threshold * self.scale_[a]
        hi = self.mean_[a] + self.threshold * self.scale_[a]
        X[:, a] = np.clip(X[:, a], lo, hi)
        return X


def zscore_filter(matrix: FeatureMatrix, threshold: float = 5.0, stats=None):
    """Drop rows of ``matrix`` with any column beyond ``threshold`` sds.

    ``stats`` is a fitted :class:`ZScoreFilter` (training-row statistics);
    when omitted the statistics are computed from ``matrix`` itself.
    Returns the kept matrix and the dropped row indices.
    """
    if stats is None:
        stats = ZScoreFilter(threshold).fit(matrix.rows)
    else:
        stats = _with_threshold(stats, threshold)
    dropped = np.flatnonzero(stats.outlier_mask(matrix.rows))
    kept = np.setdiff1d(np.arange(len(matrix)), dropped)
    return matrix.take(kept), dropped


def _with_threshold(stats, threshold):
    if stats.threshold == threshold:
        return stats
    clone = ZScoreFilter(threshold)
    clone.mean_, clone.scale_, clone.active_ = stats.mean_, stats.scale_, stats.active_
    clone.n_features_in_ = stats.n_features_in_
    return clone


# -------------------------------------------------------------- polynomial


def _monomials(n_features: int, degree: int):
    for d in range(1, degree + 1):
        yield from itertools.combinations_with_replacement(range(n_features), d)


def _monomial_name(names, combo):
    counts = Counter(combo)
    parts = []
    for j in sorted(counts):
        parts.append(names[j] if counts[j] == 1 else f"{names[j]}^{counts[j]}")
    return "*".join(parts)


def polynomial_names(names: Sequence[str], degree: int) -> list:
    """Column names produced by :func:`polynomial_augment`."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return [_monomial_name(list(names), c) for c in _monomials(len(names), degree)]


class PolynomialAugmenter(TransformerMixin, BaseEstimator):
    """Append all monomials of degree 2..``degree`` (no bias column).

    Output columns are ordered by degree, then lexicographically by factor
    index, e.g. ``a, b, a^2, a*b, b^2`` for two inputs and degree 2.
    """

    def __init__(self, degree=2):
        self.degree = degree

    def fit(self, X, y=None, feature_names=None):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("degree must be an integer >= 1")
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(X.shape[1])]
        self.feature_names_in_ = np.asarray(feature_names, dtype=object)
        self.combos_ = list(_monomials(X.shape[1], int(self.degree)))
        return self

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "combos_")
        names = list(self.feature_names_in_ if input_features is None else input_features)
        return np.asarray([_monomial_name(names, c) for c in self.combos_], dtype=object)

    def transform(self, X):
        check_is_fitted(self, "combos_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        out = np.empty((X.shape[0], len(self.combos_)))
        for j, combo in enumerate(self.combos_):
            col = X[:, combo[0]].copy()
            for k in combo[1:]:
                col *= X[:, k]
            out[:, j] = col
        return out


def polynomial_augment(matrix: FeatureMatrix, degree: int) -> FeatureMatrix:
    """``matrix`` with all monomials up to ``degree`` appended."""
    if int(degree) != degree or degree < 1:
        raise ValueError("degree must be an integer >= 1")
    if degree == 1:
        return matrix
    aug = PolynomialAugmenter(degree).fit(matrix.rows, feature_names=matrix.column_names)
    return FeatureMatrix(
        tuple(aug.get_feature_names_out()), aug.transform(matrix.rows),
        matrix.labels, matrix.patient_ids,
    )


# --------------------------------------------------------------------- CSV


def write_feature_matrix_csv(matrix: FeatureMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(matrix.column_names) + ["label", "patient_id"])
        for row, label, pid in zip(matrix.rows, matrix.labels, matrix.patient_ids):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(label)), pid])


def read_feature_matrix_csv(path) -> FeatureMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["label", "patient_id"]:
            raise ValueError(f"{path}: last two columns must be label, patient_id")
        rows, labels, ids = [], [], []
        for r in reader:
            rows.append([float(v) for v in r[:-2]])
            labels.append(float(r[-2]))
            ids.append(r[-1])
    names = tuple(header[:-2])
    return FeatureMatrix(names, np.array(rows, dtype=float).reshape(len(rows), len(names)),
                         labels, np.array(ids, dtype=object))
