from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["StandardizationParams", "standardize", "inactive_columns"]


def inactive_columns(mean, scale) -> np.ndarray:
    """Mask of columns treated as constant."""
    return ~(np.asarray(scale) > 1e-10 * (1.0 + np.abs(np.asarray(mean))))


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    """Column means, sample standard deviations and the label mean.

    Inactive (zero-variance) columns keep ``scale`` 1 and are zeroed.
    """

    mean: np.ndarray
    scale: np.ndarray
    active: np.ndarray
    y_mean: float

    def apply(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.mean) / self.scale
        Z[:, ~self.active] = 0.0
        return Z

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "active": [bool(v) for v in self.active],
            "y_mean": float(self.y_mean),
        }

    @classmethod
    def from_dict(cls, d) -> "StandardizationParams":
        return cls(np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float),
                   np.array(d["active"], dtype=bool), float(d["y_mean"]))


def standardize(X, y):
    """Center and scale columns to sample sd 1; center ``y``.

    Returns ``(Z, y_centered, StandardizationParams)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("standardize needs a 2-d matrix with at least two rows")
    if len(y) != X.shape[0]:
        raise ValueError("X and y lengths differ")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    active = ~inactive_columns(mean, sd)
    scale = np.where(active, sd, 1.0)
    params = StandardizationParams(mean, scale, active, float(y.mean()))
    return params.apply(X), y - params.y_mean, params
