from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._cv import InnerCV
from ._lars import coefficients_at, lars_lasso_path
from ._standardize import StandardizationParams, standardize

__all__ = ["FittedModel", "LassoLarsRegressor"]


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A sparse linear scorer over named features.

    ``std_coef`` are coefficients on standardized features; ``coef`` and
    ``intercept`` are the equivalent original-scale values. The score of a
    row is ``y_mean + sum(std_coef * (x - mean) / scale)``.
    """

    feature_names: tuple
    std_coef: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    y_mean: float
    alpha: float
    lambda_: float
    metadata: dict = field(default_factory=dict)

    @property
    def coef(self) -> np.ndarray:
        return self.std_coef / self.scale

    @property
    def intercept(self) -> float:
        return float(self.y_mean - np.dot(self.coef, self.mean))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_row(self, row: Mapping[str, float]) -> float:
        missing = [n for n in self.feature_names if n not in row]
        if missing:
            raise KeyError(f"missing feature(s): {', '.join(missing)}")
        x = np.array([float(row[n]) for n in self.feature_names])
        return float(self.y_mean + np.dot(self.std_coef, (x - self.mean) / self.scale))

    def predict(self, X, column_names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Scores for rows of ``X``; ``column_names`` selects the model columns."""
        X = np.asarray(X, dtype=float)
        if column_names is not None:
            names = list(column_names)
            missing = [n for n in self.feature_names if n not in names]
            if missing:
                raise KeyError(f"missing feature(s): {', '.join(missing)}")
            X = X[:, [names.index(n) for n in self.feature_names]]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns")
        return self.y_mean + ((X - self.mean) / self.scale) @ self.std_coef

    def to_dict(self) -> dict:
        return {
            "kind": "lasso_lars_model",
            "feature_names": list(self.feature_names),
            "coef": [float(v) for v in self.coef],
            "intercept": self.intercept,
            "std_coef": [float(v) for v in self.std_coef],
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "y_mean": float(self.y_mean),
            "alpha": float(self.alpha),
            "lambda": float(self.lambda_),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        return cls(
            tuple(d["feature_names"]),
            np.array(d["std_coef"], dtype=float),
            np.array(d["mean"], dtype=float),
            np.array(d["scale"], dtype=float),
            float(d["y_mean"]),
            float(d["alpha"]),
            float(d["lambda"]),
            dict(d.get("metadata", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


def model_from_solution(names, std_coef, mean, scale, y_mean, alpha, n_samples, metadata=None,
                        keep_zero=False) -> FittedModel:
    """Build a :class:`FittedModel` keeping only nonzero coefficients."""
    std_coef = np.asarray(std_coef, dtype=float)
    keep = np.ones(len(std_coef), bool) if keep_zero else std_coef != 0
    idx = np.flatnonzero(keep)
    return FittedModel(
        tuple(names[j] for j in idx),
        std_coef[idx],
        np.asarray(mean, dtype=float)[idx],
        np.asarray(scale, dtype=float)[idx],
        float(y_mean),
        float(alpha),
        float(alpha * n_samples),
        dict(metadata or {}),
    )


class LassoLarsRegressor(RegressorMixin, BaseEstimator):
    """LASSO regression fitted along the exact LARS path.

    Parameters
    ----------
    alpha : float or None
        Penalty on the per-sample scale (``lambda / n_samples``). ``None``
        chooses it by patient-grouped inner cross-validation on AUROC.
    inner_folds : int
        Folds for the penalty search.
    max_lambdas : int
        Maximal number of candidate penalties.
    random_state : int
        Seed of the inner fold shuffling.
    """

    def __init__(self, alpha=None, inner_folds=3, max_lambdas=100, random_state=0):
        self.alpha = alpha
        self.inner_folds = inner_folds
        self.max_lambdas = max_lambdas
        self.random_state = random_state

    def fit(self, X, y, groups=None, feature_names=None):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least two samples")
        self.n_features_in_ = X.shape[1]
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(X.shape[1])]
        self.feature_names_in_ = np.asarray(feature_names, dtype=object)
        if self.alpha is None:
            if groups is None:
                groups = np.arange(X.shape[0])
            cv = InnerCV(X, y, groups, self.inner_folds, self.random_state, self.max_lambdas)
            selection = cv.select(np.arange(X.shape[1]))
            self.alpha_ = selection.alpha
            self.cv_score_ = selection.score
            self.selection_ = selection
        else:
            if self.alpha < 0:
                raise ValueError("alpha must be non-negative")
            self.alpha_ = float(self.alpha)
        Z, yc, params = standardize(X, y)
        path = lars_lasso_path(Z[:, params.active], yc)
        beta = np.zeros(X.shape[1])
        beta[params.active] = coefficients_at(path, self.alpha_ * X.shape[0])
        self.standardization_ = params
        self.path_ = path
        self.std_coef_ = beta
        self.coef_ = beta / params.scale
        self.intercept_ = float(params.y_mean - self.coef_ @ params.mean)
        self.lambda_ = self.alpha_ * X.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def to_model(self, metadata=None) -> FittedModel:
        check_is_fitted(self, "coef_")
        p = self.standardization_
        return model_from_solution(
            list(self.feature_names_in_), self.std_coef_, p.mean, p.scale, p.y_mean,
            self.alpha_, self.path_.n_samples, metadata,
        )
