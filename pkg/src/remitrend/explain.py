"""Selected-feature reports and scatter exports of model outputs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data_model import FeatureMatrix
from .framing import Direction
from .sparse_regression import FittedModel

__all__ = [
    "ScatterExport",
    "pick_best_fold",
    "truncate_for_plot",
    "export_scatter",
    "export_best_fold",
    "feature_report",
]


def pick_best_fold(report) -> int:
    """Fold id with the highest test AUROC; ties go to the lowest id.

    ``report`` is an ``EvaluationReport`` or a sequence of AUROC values.
    Skipped folds never win.
    """
    if hasattr(report, "folds"):
        pairs = [(f.fold, f.auroc) for f in report.folds if f.ok]
    else:
        pairs = list(enumerate(float(v) for v in report))
    pairs = [(k, v) for k, v in pairs if np.isfinite(v)]
    if not pairs:
        raise ValueError("no evaluated fold to choose from")
    best = max(v for _, v in pairs)
    return min(k for k, v in pairs if v == best)


def truncate_for_plot(outputs, percentile: float = 95.0) -> np.ndarray:
    """Indices of the outputs not above their ``percentile``-th percentile.

    The percentile interpolates linearly between order statistics. Indices
    come back sorted by output value, ascending (stable for ties).
    """
    v = np.asarray(outputs, dtype=float).ravel()
    if len(v) == 0:
        raise ValueError("cannot truncate an empty output set")
    if not 0 < percentile <= 100:
        raise ValueError("percentile must be in (0, 100]")
    cut = np.percentile(v, percentile, method="linear")
    order = np.argsort(v, kind="stable")
    return order[v[order] <= cut]


@dataclass(frozen=True, eq=False)
class ScatterExport:
    """Model outputs in the space of the selected features.

    Rows are ordered so that the most change-predicting outputs come last.
    """

    features: tuple
    values: np.ndarray
    outputs: np.ndarray
    direction: str
    percentile: float
    n_total: int
    n_kept: int
    cutoff: float
    fold: Optional[int] = None

    @property
    def n_dropped(self) -> int:
        return self.n_total - self.n_kept

    def metadata(self) -> dict:
        return {
            "direction": self.direction,
            "fold": self.fold,
            "features": list(self.features),
            "percentile": self.percentile,
            "truncated_tail": "upper" if self.direction == Direction.INCREASE.value else "lower",
            "cutoff": self.cutoff,
            "n_total": self.n_total,
            "n_kept": self.n_kept,
            "n_dropped": self.n_dropped,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.features) + ["model_output"])
            for row, out in zip(self.values, self.outputs):
                w.writerow([repr(float(v)) for v in row] + [repr(float(out))])

    def write_metadata(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.metadata(), fh, indent=2)
            fh.write("\n")


def export_scatter(model: FittedModel, matrix: FeatureMatrix, outputs=None,
                   direction=Direction.INCREASE, percentile: float = 95.0,
                   fold: Optional[int] = None) -> ScatterExport:
    """Coordinates of every kept point in the model's selected features.

    ``outputs`` defaults to the model applied to ``matrix``. The extreme
    change-predicting tail is cut to avoid colour saturation: the top tail
    for increase models, the bottom tail (via negation) for ``"decrease"``,
    where the output is taken to be a signed change.
    """
    names = list(model.feature_names)
    missing = [n for n in names if n not in matrix.column_names]
    if missing:
        raise KeyError(f"missing feature column(s): {', '.join(missing)}")
    values = matrix.select_columns(names).rows
    if outputs is None:
        outputs = model.predict(values)
    outputs = np.asarray(outputs, dtype=float)
    if len(outputs) != len(matrix):
        raise ValueError("one output per matrix row is required")
    direction = str(getattr(direction, "value", direction))
    negate = direction == Direction.DECREASE.value
    ranked = -outputs if negate else outputs
    keep = truncate_for_plot(ranked, percentile)
    cutoff = float(np.percentile(ranked, percentile, method="linear"))
    return ScatterExport(
        tuple(names), values[keep], outputs[keep], direction, float(percentile),
        len(outputs), len(keep), -cutoff if negate else cutoff, fold,
    )


def export_best_fold(report, percentile: float = 95.0) -> ScatterExport:
    """Scatter export of the best fold of an ``EvaluationReport``.

    Outputs there score change magnitudes in both directions, so the upper
    tail is cut either way.
    """
    k = pick_best_fold(report)
    fold = next(f for f in report.folds if f.fold == k)
    if fold.test_matrix is None or fold.outputs is None:
        raise ValueError("report was produced without keep_outputs")
    exp = export_scatter(fold.model, fold.test_matrix, fold.outputs, Direction.INCREASE,
                         percentile, fold=k)
    return ScatterExport(exp.features, exp.values, exp.outputs, report.direction,
                         exp.percentile, exp.n_total, exp.n_kept, exp.cutoff, k)


def feature_report(model: FittedModel) -> str:
    """One line per selected feature with its coefficients."""
    lines = [f"{'feature':<40} {'coef':>14} {'std_coef':>14}"]
    order = np.argsort(-np.abs(model.std_coef), kind="stable")
    for j in order:
        lines.append(f"{model.feature_names[j]:<40} {model.coef[j]:>14.6g} "
                     f"{model.std_coef[j]:>14.6g}")
    lines.append(f"{'(intercept)':<40} {model.intercept:>14.6g}")
    return "\n".join(lines) + "\n"
