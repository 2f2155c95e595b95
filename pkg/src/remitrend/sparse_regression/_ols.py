from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr

from ._special import student_t_two_sided

__all__ = ["OlsInference", "CollinearityError", "ols_inference"]

_COND_LIMIT = 1e12


class CollinearityError(np.linalg.LinAlgError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("collinear columns: " + ", ".join(map(str, self.columns)))


@dataclass(frozen=True, eq=False)
class OlsInference:
    """Per-feature OLS estimates with two-sided t-test p-values.

    Arrays are aligned with ``names``; the intercept is reported separately.
    """

    names: tuple
    coef: np.ndarray
    std_err: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    intercept: float
    dof: int
    rss: float

    def as_rows(self):
        return [
            (n, float(c), float(s), float(t), float(p))
            for n, c, s, t, p in zip(self.names, self.coef, self.std_err, self.t_stat, self.p_value)
        ]


def _collinear_columns(Xc: np.ndarray, names) -> list:
    norms = np.linalg.norm(Xc, axis=0)
    Z = Xc / np.where(norms > 0, norms, 1.0)
    _, R, piv = qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * max(diag.max(), 1e-300))) if len(diag) else 0
    bad = sorted(piv[rank:]) + [j for j in range(Xc.shape[1]) if norms[j] == 0 and j not in piv[rank:]]
    return [names[j] for j in sorted(set(bad))]


def ols_inference(X, y, columns: Optional[Sequence] = None, names=None) -> OlsInference:
    """Ordinary least squares with an intercept on ``columns`` of ``X``.

    ``columns`` may be integer indices or, with ``names``, column names.
    Standard errors use ``RSS / (n - p - 1)``; p-values test each coefficient
    against zero with Student's t on ``n - p - 1`` degrees of freedom.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise ValueError("X must be (n, p) with len(y) == n")
    all_names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if columns is None:
        idx = list(range(X.shape[1]))
    else:
        idx = [all_names.index(c) if isinstance(c, str) else int(c) for c in columns]
    sub_names = tuple(all_names[j] for j in idx)
    A = X[:, idx]
    n, p = A.shape
    dof = n - p - 1
    if dof <= 0:
        raise ValueError(f"need n > p + 1 for inference (n={n}, p={p})")

    x_mean = A.mean(axis=0)
    y_mean = float(y.mean())
    Ac = A - x_mean
    yc = y - y_mean
    xtx = Ac.T @ Ac
    d = np.sqrt(np.diag(xtx))
    if np.any(d == 0):
        raise CollinearityError(_collinear_columns(Ac, sub_names))
    corr = xtx / np.outer(d, d)
    if np.linalg.cond(corr) > _COND_LIMIT:
        raise CollinearityError(_collinear_columns(Ac, sub_names))
    try:
        factor = cho_factor(xtx, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise CollinearityError(_collinear_columns(Ac, sub_names)) from None
    coef = cho_solve(factor, Ac.T @ yc, check_finite=False)
    resid = yc - Ac @ coef
    rss = float(resid @ resid)
    tss = float(yc @ yc)
    if rss <= 1e-28 * max(tss, 1e-300):
        rss = 0.0
    sigma2 = rss / dof
    inv_diag = np.diag(cho_solve(factor, np.eye(p), check_finite=False))
    se = np.sqrt(sigma2 * inv_diag)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / np.where(se > 0, se, 1.0), np.where(coef != 0, np.inf, 0.0))
    t = np.where((se == 0) & (coef < 0), -np.inf, t)
    pvals = np.array([student_t_two_sided(float(v), dof) for v in t])
    intercept = y_mean - float(x_mean @ coef)
    return OlsInference(sub_names, coef, se, t, pvals, intercept, dof, rss)
