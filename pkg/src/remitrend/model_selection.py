"""Feature elimination, polynomial escalation and patient-level nested CV."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data_model import FeatureMatrix
from .features import PolynomialAugmenter, ZScoreFilter, build_feature_matrix
from .framing import EXCLUSION_RULES, FramingConfig, frame_record
from .metrics import auprc, auroc, binarize, roc_curve, youden_point
from .sparse_regression import (
    DegenerateFoldsError,
    FittedModel,
    InnerCV,
    model_from_solution,
    patient_kfold,
)

__all__ = [
    "SelectionConfig",
    "RfeStep",
    "RfeResult",
    "EscalationResult",
    "ChangeDetector",
    "FoldResult",
    "EvaluationReport",
    "patient_kfold",
    "rfe",
    "escalate_polynomial",
    "permute_within_patients",
    "run_experiment",
]

log = logging.getLogger(__name__)

# named sub-streams derived from the run seed
_STREAM_OUTER = 0
_STREAM_INNER = 1
_STREAM_PERMUTE = 2


@dataclass(frozen=True)
class SelectionConfig:
    """Training-loop settings.

    Parameters
    ----------
    rfe_tolerance : float
        Elimination stops once a drop would lower the inner score below
        ``best * (1 - rfe_tolerance)``.
    poly_tolerance : float
        Degree ``d + 1`` is accepted only if it beats degree ``d`` by more
        than this relative margin.
    max_degree : int
        Highest polynomial order tried.
    prune_unselected : bool
        Drop every zero-coefficient column in one elimination step instead
        of one at a time. Active columns are always removed singly.
    """

    rfe_tolerance: float = 0.01
    poly_tolerance: float = 0.01
    inner_folds: int = 3
    outer_folds: int = 5
    seed: int = 0
    max_degree: int = 3
    zscore_threshold: float = 5.0
    prune_unselected: bool = True
    max_lambdas: int = 100

    def __post_init__(self):
        if not (self.rfe_tolerance > 0 and self.poly_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.inner_folds < 2 or self.outer_folds < 2:
            raise ValueError("need at least two folds")
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        if not self.zscore_threshold > 0:
            raise ValueError("zscore_threshold must be positive")
        if self.max_lambdas < 2:
            raise ValueError("max_lambdas must be >= 2")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _inner_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, _STREAM_INNER]).generate_state(1)[0])


# ------------------------------------------------------------------- RFE


@dataclass(frozen=True)
class RfeStep:
    columns: tuple
    score: float
    alpha: float
    dropped: tuple = ()
    accepted: bool = True


@dataclass(frozen=True, eq=False)
class RfeResult:
    model: FittedModel
    columns: tuple
    score: float
    trace: tuple


def _unpack(matrix, labels, patient_ids, feature_names):
    if isinstance(matrix, FeatureMatrix):
        X = matrix.rows
        names = list(matrix.column_names)
        labels = matrix.labels if labels is None else labels
        patient_ids = matrix.patient_ids if patient_ids is None else patient_ids
    else:
        X = check_array(matrix, dtype=float, ensure_min_samples=1, ensure_min_features=0)
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    if X.shape[1] == 0 or X.shape[0] == 0:
        raise ValueError("rfe needs a nonempty matrix")
    y = np.asarray(labels, dtype=float)
    groups = np.asarray(patient_ids, dtype=object).astype(str)
    if len(y) != X.shape[0] or len(groups) != X.shape[0]:
        raise ValueError("labels and patient_ids must match the rows")
    if len(names) != X.shape[1]:
        raise ValueError("feature_names must match the columns")
    return X, y, groups, names


def _score(cv: InnerCV, cols):
    try:
        sel = cv.select(cols)
    except DegenerateFoldsError:
        return None, -math.inf
    return sel, sel.score


def _next_drop(beta, prune_unselected: bool):
    """Positions (into the current column list) removed by one step."""
    zero = np.flatnonzero(beta == 0)
    if len(zero) == len(beta):
        return [0]
    if len(zero):
        return list(zero) if prune_unselected else [int(zero[0])]
    return [int(np.argmin(np.abs(beta)))]


def rfe(matrix, labels=None, patient_ids=None, config: SelectionConfig = SelectionConfig(),
        feature_names=None, cv: Optional[InnerCV] = None) -> RfeResult:
    """Recursive elimination of the least important column.

    Importance is the absolute standardized coefficient at the inner-CV
    penalty; unselected columns go first, in column order. The loop stops
    at the first drop whose inner score falls more than
    ``config.rfe_tolerance`` (relative) below the best score seen, and the
    model fitted before that drop is returned together with the full trace
    (the rejected step is included with ``accepted=False``).
    """
    X, y, groups, names = _unpack(matrix, labels, patient_ids, feature_names)
    if cv is None:
        cv = InnerCV(X, y, groups, config.inner_folds, _inner_seed(config.seed), config.max_lambdas)
    cols = list(range(X.shape[1]))
    sel, score = _score(cv, cols)
    if sel is None:
        raise DegenerateFoldsError("every inner validation fold is single-class")
    best = score
    trace = [RfeStep(tuple(names[j] for j in cols), score, sel.alpha)]
    while len(cols) > 1:
        _, _, beta = cv.fit(cols, sel.alpha)
        drop = _next_drop(beta, config.prune_unselected)
        gone = set(drop)
        cand = [c for k, c in enumerate(cols) if k not in gone]
        cand_sel, cand_score = _score(cv, cand)
        step = RfeStep(tuple(names[j] for j in cand), cand_score,
                       cand_sel.alpha if cand_sel else math.nan,
                       tuple(names[cols[k]] for k in drop))
        if cand_score < best - config.rfe_tolerance * abs(best):
            trace.append(RfeStep(step.columns, step.score, step.alpha, step.dropped, False))
            break
        trace.append(step)
        cols, sel, score = cand, cand_sel, cand_score
        best = max(best, score)
    sys, path, beta = cv.fit(cols, sel.alpha)
    model = model_from_solution(
        [names[j] for j in cols], beta, sys.mean, sys.scale, sys.y_mean, sel.alpha, sys.n,
        {"inner_score": score},
    )
    return RfeResult(model, tuple(names[j] for j in cols), score, tuple(trace))


# ------------------------------------------------------------- escalation


@dataclass(frozen=True, eq=False)
class EscalationResult:
    degree: int
    model: FittedModel
    score: float
    scores: tuple          # inner score per degree tried
    rfe: RfeResult


def escalate_polynomial(matrix, labels=None, patient_ids=None,
                        config: SelectionConfig = SelectionConfig(), max_degree=None,
                        feature_names=None) -> EscalationResult:
    """Raise the polynomial order while it pays.

    Degree ``d + 1`` is kept only if its RFE score exceeds that of degree
    ``d`` by more than ``config.poly_tolerance`` (relative).
    """
    X, y, groups, names = _unpack(matrix, labels, patient_ids, feature_names)
    max_degree = config.max_degree if max_degree is None else max_degree
    # the inner fold layout depends only on the patients, so all degrees share it
    current = rfe(X, y, groups, config, names)
    degree, scores = 1, [current.score]
    for d in range(2, max_degree + 1):
        aug = PolynomialAugmenter(d).fit(X, feature_names=names)
        try:
            cand = rfe(aug.transform(X), y, groups, config, list(aug.get_feature_names_out()))
        except DegenerateFoldsError:
            break
        scores.append(cand.score)
        if not cand.score > current.score + config.poly_tolerance * abs(current.score):
            break
        current, degree = cand, d
    return EscalationResult(degree, current.model, current.score, tuple(scores), current)


# -------------------------------------------------------- composite model


class ChangeDetector(BaseEstimator):
    """Outlier filter, polynomial escalation and sparse linear scorer.

    ``fit`` drops training rows with any ``|z| > zscore_threshold``;
    ``predict`` clamps incoming rows to the same band instead, so that every
    test segment receives a score.
    """

    def __init__(self, config: SelectionConfig = SelectionConfig()):
        self.config = config

    def fit(self, X, y, groups, feature_names=None):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float)
        groups = np.asarray(groups, dtype=object).astype(str)
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(X.shape[1])]
        self.feature_names_in_ = np.asarray(feature_names, dtype=object)
        self.n_features_in_ = X.shape[1]
        self.zscore_ = ZScoreFilter(self.config.zscore_threshold).fit(X)
        keep = ~self.zscore_.outlier_mask(X)
        self.n_dropped_ = int((~keep).sum())
        self.escalation_ = escalate_polynomial(
            X[keep], y[keep], groups[keep], self.config, feature_names=list(feature_names)
        )
        self.degree_ = self.escalation_.degree
        self.model_ = self.escalation_.model
        return self

    def expand(self, X) -> tuple:
        """Clamped, augmented rows and their column names."""
        check_is_fitted(self, "model_")
        X = self.zscore_.transform(X)
        names = list(self.feature_names_in_)
        if self.degree_ > 1:
            aug = PolynomialAugmenter(self.degree_).fit(X, feature_names=names)
            return aug.transform(X), list(aug.get_feature_names_out())
        return X, names

    def predict(self, X):
        Z, names = self.expand(X)
        return self.model_.predict(Z, column_names=names)

    def to_model(self, metadata=None) -> FittedModel:
        """The scorer with enough metadata to rebuild the input transform."""
        check_is_fitted(self, "model_")
        meta = dict(self.model_.metadata)
        meta.update({
            "degree": self.degree_,
            "base_features": list(self.feature_names_in_),
            "zscore_threshold": float(self.zscore_.threshold),
            "zscore_mean": [float(v) for v in self.zscore_.mean_],
            "zscore_scale": [float(v) for v in self.zscore_.scale_],
        })
        meta.update(metadata or {})
        m = self.model_
        return FittedModel(m.feature_names, m.std_coef, m.mean, m.scale, m.y_mean, m.alpha,
                           m.lambda_, meta)


# -------------------------------------------------------------- experiment


@dataclass(eq=False)
class FoldResult:
    """Outcome of one outer fold; ``status`` is ``"ok"`` or ``"skipped"``."""

    fold: int
    test_patients: tuple
    n_train: int
    n_test: int
    status: str = "ok"
    reason: str = ""
    n_dropped: int = 0
    prevalence: float = math.nan
    auroc: float = math.nan
    auprc: float = math.nan
    threshold: float = math.nan
    sensitivity: float = math.nan
    specificity: float = math.nan
    precision: float = math.nan
    degree: int = 0
    inner_score: float = math.nan
    selected: tuple = ()
    model: Optional[FittedModel] = None
    trace: tuple = ()
    degree_scores: tuple = ()
    outputs: Optional[np.ndarray] = field(default=None, repr=False)
    test_matrix: Optional[FeatureMatrix] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


FOLD_CSV_COLUMNS = (
    "fold", "status", "n_train", "n_test", "n_dropped", "prevalence", "auroc", "auprc",
    "threshold", "sensitivity", "specificity", "precision", "degree", "inner_score",
    "n_selected", "selected",
)

AGGREGATED = ("auroc", "auprc", "prevalence", "sensitivity", "specificity", "precision")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(eq=False)
class EvaluationReport:
    direction: str
    framing: dict
    selection: dict
    folds: list
    exclusions: dict
    n_patients: int
    n_segments: int
    n_raw_segments: int
    prevalence: float
    permuted: bool = False

    @property
    def ok_folds(self) -> list:
        return [f for f in self.folds if f.ok]

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(f, metric) for f in self.ok_folds], dtype=float)

    def aggregate(self, metric: str) -> tuple:
        """``(mean, min, max)`` over the evaluated folds."""
        v = self.values(metric)
        if len(v) == 0:
            return (math.nan, math.nan, math.nan)
        return (float(v.mean()), float(v.min()), float(v.max()))

    def summary(self, metric: str, digits: int = 3) -> str:
        mean, lo, hi = self.aggregate(metric)
        return f"{mean:.{digits}f} [{lo:.{digits}f}, {hi:.{digits}f}]"

    def selected_counts(self) -> Counter:
        return Counter(name for f in self.ok_folds for name in f.selected)

    def to_text(self) -> str:
        lines = [f"direction: {self.direction}" + (" (labels permuted)" if self.permuted else ""),
                 f"patients: {self.n_patients}",
                 f"segments: {self.n_segments} of {self.n_raw_segments} enumerated",
                 f"prevalence: {self.prevalence:.4f}",
                 "exclusions: " + ", ".join(f"{k}={self.exclusions[k]}" for k in EXCLUSION_RULES),
                 ""]
        for f in self.folds:
            lines.append(f"[fold {f.fold}]")
            lines.append(f"  status: {f.status}" + (f" ({f.reason})" if f.reason else ""))
            lines.append(f"  train/test segments: {f.n_train}/{f.n_test}")
            if f.ok:
                lines.append(f"  outliers dropped: {f.n_dropped}")
                lines.append(f"  prevalence: {f.prevalence:.4f}")
                lines.append(f"  AUROC: {f.auroc:.4f}")
                lines.append(f"  AUPRC: {f.auprc:.4f}")
                lines.append(f"  operating point: threshold={f.threshold:.6g} "
                             f"sensitivity={f.sensitivity:.4f} specificity={f.specificity:.4f} "
                             f"precision={f.precision:.4f}")
                lines.append(f"  degree: {f.degree}  inner score: {f.inner_score:.4f}")
                lines.append(f"  selected ({len(f.selected)}): {', '.join(f.selected)}")
            lines.append("")
        ok = self.ok_folds
        lines.append("[aggregate] mean [min, max] across folds")
        lines.append(f"  folds evaluated: {len(ok)} of {len(self.folds)}")
        for metric in AGGREGATED:
            lines.append(f"  {metric}: {self.summary(metric)}")
        if ok:
            n = np.array([len(f.selected) for f in ok], dtype=float)
            lines.append(f"  n_features: {n.mean():.1f} [{int(n.min())}, {int(n.max())}]")
            degrees = Counter(f.degree for f in ok)
            lines.append("  degree: " + ", ".join(f"{d}x{degrees[d]}" for d in sorted(degrees)))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        folds = []
        for f in self.folds:
            d = {c: getattr(f, c) for c in FOLD_CSV_COLUMNS if c not in ("n_selected",)}
            d["selected"] = list(f.selected)
            d["reason"] = f.reason
            d["test_patients"] = list(f.test_patients)
            d["degree_scores"] = list(f.degree_scores)
            d["trace"] = [
                {"columns": list(s.columns), "score": s.score, "alpha": s.alpha,
                 "dropped": list(s.dropped), "accepted": s.accepted}
                for s in f.trace
            ]
            folds.append(d)
        return {
            "direction": self.direction,
            "permuted": self.permuted,
            "framing": self.framing,
            "selection": self.selection,
            "n_patients": self.n_patients,
            "n_segments": self.n_segments,
            "n_raw_segments": self.n_raw_segments,
            "prevalence": self.prevalence,
            "exclusions": dict(self.exclusions),
            "folds": folds,
            "aggregate": {m: list(self.aggregate(m)) for m in AGGREGATED},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        """Rebuild a report (without models or outputs) from :meth:`to_dict`."""
        folds = []
        for f in d["folds"]:
            trace = tuple(
                RfeStep(tuple(s["columns"]), _unnull(s["score"]), _unnull(s["alpha"]),
                        tuple(s["dropped"]), s["accepted"])
                for s in f.get("trace", ())
            )
            folds.append(FoldResult(
                fold=f["fold"], test_patients=tuple(f.get("test_patients", ())),
                n_train=f["n_train"], n_test=f["n_test"], status=f["status"],
                reason=f.get("reason", ""), n_dropped=f["n_dropped"],
                prevalence=_unnull(f["prevalence"]), auroc=_unnull(f["auroc"]),
                auprc=_unnull(f["auprc"]),
                threshold=_unnull(f["threshold"]), sensitivity=_unnull(f["sensitivity"]),
                specificity=_unnull(f["specificity"]), precision=_unnull(f["precision"]),
                degree=f["degree"], inner_score=_unnull(f["inner_score"]),
                selected=tuple(f["selected"]), trace=trace,
                degree_scores=tuple(_unnull(v) for v in f.get("degree_scores", ())),
            ))
        return cls(d["direction"], d["framing"], d["selection"], folds, d["exclusions"],
                   d["n_patients"], d["n_segments"], d["n_raw_segments"], d["prevalence"],
                   d.get("permuted", False))

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.to_dict()), indent=2)

    def write_fold_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FOLD_CSV_COLUMNS)
            for f in self.folds:
                row = [getattr(f, c) if c not in ("n_selected", "selected") else None
                       for c in FOLD_CSV_COLUMNS]
                row[-2] = len(f.selected)
                row[-1] = ";".join(f.selected)
                w.writerow([_fmt(v) for v in row])


def _unnull(v):
    return math.nan if v is None else v


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def permute_within_patients(labels, patient_ids, seed: int) -> np.ndarray:
    """Shuffle labels among the rows of each patient (patients in sorted order)."""
    labels = np.asarray(labels, dtype=float)
    pids = np.asarray(patient_ids, dtype=object).astype(str)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_PERMUTE]))
    out = labels.copy()
    for pid in np.unique(pids):
        idx = np.flatnonzero(pids == pid)
        out[idx] = labels[idx[rng.permutation(len(idx))]]
    return out


def _evaluate_fold(fold, matrix: FeatureMatrix, train_ids, test_ids, config: SelectionConfig,
                   keep_outputs: bool) -> FoldResult:
    pids = matrix.patient_ids.astype(str)
    train = np.flatnonzero(np.isin(pids, train_ids))
    test = np.flatnonzero(np.isin(pids, test_ids))
    result = FoldResult(fold, tuple(str(p) for p in test_ids), len(train), len(test))
    y_test = binarize(matrix.labels[test])
    if len(test) == 0 or y_test.all() or not y_test.any():
        result.status, result.reason = "skipped", "test fold is single-class"
        log.warning("fold %d skipped: test fold is single-class", fold)
        return result
    det = ChangeDetector(config)
    try:
        det.fit(matrix.rows[train], matrix.labels[train], pids[train],
                feature_names=list(matrix.column_names))
    except DegenerateFoldsError as exc:
        result.status, result.reason = "skipped", str(exc)
        log.warning("fold %d skipped: %s", fold, exc)
        return result
    Z, names = det.expand(matrix.rows[test])
    outputs = det.model_.predict(Z, column_names=names)
    roc = roc_curve(outputs, y_test)
    op = youden_point(roc)
    result.n_dropped = det.n_dropped_
    result.prevalence = float(y_test.mean())
    result.auroc = auroc(outputs, y_test)
    result.auprc = auprc(outputs, y_test)
    result.threshold = op.threshold
    result.sensitivity = op.sensitivity
    result.specificity = op.specificity
    result.precision = op.precision
    result.degree = det.degree_
    result.inner_score = det.escalation_.score
    result.selected = det.model_.feature_names
    result.model = det.to_model({"fold": fold})
    result.trace = det.escalation_.rfe.trace
    result.degree_scores = det.escalation_.scores
    if keep_outputs:
        result.outputs = outputs
        sel = [names.index(n) for n in det.model_.feature_names]
        result.test_matrix = FeatureMatrix(
            det.model_.feature_names, Z[:, sel], matrix.labels[test], pids[test]
        )
    return result


def build_dataset(records, framing: FramingConfig):
    """Frame every record and featurise the kept segments.

    Returns the feature matrix, summed exclusion counts and the number of
    enumerated segments.
    """
    counts = Counter({rule: 0 for rule in EXCLUSION_RULES})
    segments, n_raw = [], 0
    for record in sorted(records, key=lambda r: r.id):
        segs, c, n = frame_record(record, framing)
        segments.extend(segs)
        counts.update(c)
        n_raw += n
    matrix = build_feature_matrix(segments, records)
    return matrix, counts, n_raw


def run_experiment(records, framing: FramingConfig, config: SelectionConfig = SelectionConfig(),
                   jobs: int = 1, permute_labels: bool = False, keep_outputs: bool = True,
                   dataset=None) -> EvaluationReport:
    """Outer patient-level cross-validation of the full training loop.

    Features of a segment depend only on its own patient, so they are
    computed once; z-statistics, standardization, penalty, degree and
    feature set are all refitted on the training patients of each fold.
    ``dataset`` optionally supplies the output of :func:`build_dataset`.
    """
    matrix, counts, n_raw = dataset if dataset is not None else build_dataset(records, framing)
    if len(matrix) == 0:
        raise ValueError("no segments survived framing")
    if permute_labels:
        matrix = matrix.with_labels(
            permute_within_patients(matrix.labels, matrix.patient_ids, config.seed))
    outer_seed = int(np.random.SeedSequence([config.seed, _STREAM_OUTER]).generate_state(1)[0])
    folds = patient_kfold(matrix.patient_ids, config.outer_folds, outer_seed)
    tasks = (delayed(_evaluate_fold)(k, matrix, tr, te, config, keep_outputs)
             for k, (tr, te) in enumerate(folds))
    if jobs == 1:
        results = [fn(*a, **kw) for fn, a, kw in tasks]
    else:
        results = Parallel(n_jobs=jobs)(tasks)
    return EvaluationReport(
        direction=framing.direction.value,
        framing=_framing_dict(framing),
        selection=config.to_dict(),
        folds=list(results),
        exclusions={k: int(counts[k]) for k in EXCLUSION_RULES},
        n_patients=len(np.unique(matrix.patient_ids.astype(str))),
        n_segments=len(matrix),
        n_raw_segments=n_raw,
        prevalence=float(binarize(matrix.labels).mean()),
        permuted=permute_labels,
    )


def _framing_dict(framing: FramingConfig) -> dict:
    return {
        "obs_len": framing.obs_len,
        "pred_len": framing.pred_len,
        "stride": framing.stride,
        "direction": framing.direction.value,
        "incision_guard": framing.incision_guard,
        "min_change": framing.min_change,
        "analgesic_drugs": list(framing.analgesic_drugs),
    }
