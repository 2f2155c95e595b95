"""Least-angle regression with the LASSO modification.

The path is parameterised by ``lam``, the maximal absolute correlation
``max_j |x_j' r|`` between a column and the current residual. With this
scale the KKT conditions of ``0.5 * ||y - X b||^2 + lam * ||b||_1`` read
``|x_j' r| = lam`` on the active set, so ``lam`` is also the penalty of that
objective; scikit-learn's ``alpha`` equals ``lam / n_samples``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

__all__ = ["LarsPath", "PathEvent", "lars_lasso_path", "lars_path_gram", "coefficients_at"]

TIE_TOL = 1e-12
COND_LIMIT = 1e10
_COLLINEAR_TOL = 1e-10


class PathEvent(NamedTuple):
    """A change of the active set at knot ``knot``.

    For drops, ``unmodified`` is the value the coefficient would have reached
    had plain LARS taken its full step instead of stopping at the zero
    crossing; it has the opposite sign to the coefficient before the drop.
    """

    knot: int
    kind: str
    feature: int
    unmodified: float = float("nan")


@dataclass(frozen=True, eq=False)
class LarsPath:
    """Piecewise-linear LASSO path.

    ``lambdas`` is strictly decreasing; ``coefs[k]`` is the coefficient
    vector at ``lambdas[k]`` and ``active_sets[k]`` the active features on the
    segment that starts at knot ``k``.
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    active_sets: tuple
    events: tuple
    n_samples: int
    excluded: tuple = ()

    @property
    def n_features(self) -> int:
        return self.coefs.shape[1]

    @property
    def alphas(self) -> np.ndarray:
        return self.lambdas / self.n_samples


class _Cholesky:
    """Lower factor of the active Gram matrix with append/remove."""

    def __init__(self, gram: np.ndarray):
        self.gram = gram
        self.L = np.zeros((0, 0))
        self.index = []

    def solve(self, b: np.ndarray) -> np.ndarray:
        z = solve_triangular(self.L, b, lower=True, check_finite=False)
        return solve_triangular(self.L.T, z, lower=False, check_finite=False)

    def _refactor(self, index) -> bool:
        if not index:
            self.L, self.index = np.zeros((0, 0)), []
            return True
        sub = self.gram[np.ix_(index, index)]
        try:
            L = np.linalg.cholesky(sub)
        except np.linalg.LinAlgError:
            return False
        d = np.diag(L)
        if np.min(d) <= _COLLINEAR_TOL * np.sqrt(np.max(np.diag(sub))):
            return False
        self.L, self.index = L, list(index)
        return True

    def append(self, j: int) -> bool:
        """Add column ``j``; returns False (state unchanged) if collinear."""
        g_jj = self.gram[j, j]
        k = len(self.index)
        if k == 0:
            if g_jj <= 0:
                return False
            self.L = np.array([[np.sqrt(g_jj)]])
            self.index = [j]
            return True
        v = solve_triangular(self.L, self.gram[self.index, j], lower=True, check_finite=False)
        d2 = g_jj - float(v @ v)
        if d2 <= (_COLLINEAR_TOL ** 2) * g_jj:
            return False
        L = np.zeros((k + 1, k + 1))
        L[:k, :k] = self.L
        L[k, :k] = v
        L[k, k] = np.sqrt(d2)
        diag = np.diag(L)
        if (diag.max() / diag.min()) ** 2 > COND_LIMIT:
            return self._refactor(self.index + [j])
        self.L = L
        self.index.append(j)
        return True

    def remove(self, j: int) -> None:
        rest = [i for i in self.index if i != j]
        if not self._refactor(rest):
            raise np.linalg.LinAlgError("active Gram matrix lost positive definiteness")


def lars_path_gram(gram, xty, n_samples: int, max_active=None) -> LarsPath:
    """LARS-LASSO path from the Gram matrix ``X'X`` and ``X'y``.

    Columns with zero norm never enter. A column that is (numerically) in the
    span of the active set is skipped for the rest of the path and listed in
    ``LarsPath.excluded``.
    """
    G = np.asarray(gram, dtype=float)
    c = np.array(xty, dtype=float)
    p = len(c)
    if G.shape != (p, p):
        raise ValueError("gram must be square and match xty")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(c))):
        raise ValueError("non-finite input to LARS")
    if max_active is None:
        max_active = min(n_samples - 1, p)

    beta = np.zeros(p)
    candidate = np.diag(G) > 0
    excluded = []
    chol = _Cholesky(G)
    active, signs = [], []
    events = []

    def max_corr():
        free = candidate.copy()
        free[active] = False
        return np.abs(c[free]).max() if free.any() else 0.0

    C = max(max_corr(), np.abs(c[active]).max() if active else 0.0)
    lambdas, coefs, sets = [C], [beta.copy()], [()]
    if C <= 0.0 or not candidate.any():
        return LarsPath(np.array([0.0]), np.zeros((1, p)), ((),), (), n_samples, ())

    def admit(indices, knot):
        for j in indices:
            if len(active) >= max_active:
                return
            if chol.append(j):
                active.append(j)
                signs.append(np.sign(c[j]))
                events.append(PathEvent(knot, "add", int(j)))
            else:
                candidate[j] = False
                excluded.append(int(j))

    def tied(level):
        free = candidate.copy()
        free[active] = False
        idx = np.flatnonzero(free & (np.abs(c) >= level * (1.0 - TIE_TOL)))
        return sorted(idx, key=lambda j: (-abs(c[j]), j))

    admit(tied(C), 0)
    sets[0] = tuple(active)
    just_dropped = None

    while active:
        s = np.array(signs)
        w = chol.solve(s)
        norm = 1.0 / np.sqrt(float(s @ w))
        w_a = norm * w
        a = G[:, active] @ w_a

        gamma_zero = C / norm
        gamma_hat, entering = gamma_zero, None
        if len(active) < max_active:
            free = candidate.copy()
            free[active] = False
            idx = np.flatnonzero(free)
            if len(idx):
                with np.errstate(divide="ignore", invalid="ignore"):
                    g1 = (C - c[idx]) / (norm - a[idx])
                    g2 = (C + c[idx]) / (norm + a[idx])
                floor = np.zeros(len(idx))
                if just_dropped is not None:
                    # a dropped feature sits at |c| = C; ignore its zero-length re-entry
                    floor[idx == just_dropped] = 1e-10 * gamma_zero
                g1 = np.where(np.isfinite(g1) & (g1 > floor), g1, np.inf)
                g2 = np.where(np.isfinite(g2) & (g2 > floor), g2, np.inf)
                g = np.minimum(g1, g2)
                k = int(np.argmin(g))
                if g[k] < gamma_hat:
                    gamma_hat, entering = float(g[k]), idx[k]

        b_a = beta[active]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = -b_a / w_a
        z = np.where(np.isfinite(z) & (z > 0), z, np.inf)
        drop_pos = int(np.argmin(z)) if len(z) else None
        dropping = drop_pos is not None and z[drop_pos] < gamma_hat

        gamma = float(z[drop_pos]) if dropping else gamma_hat
        beta[active] = b_a + gamma * w_a
        c -= gamma * a
        reached_zero = (not dropping) and gamma_hat == gamma_zero
        C_new = 0.0 if reached_zero else max(C - gamma * norm, 0.0)

        knot = len(lambdas)
        just_dropped = None
        if dropping:
            j = active[drop_pos]
            unmodified = float(b_a[drop_pos] + gamma_hat * w_a[drop_pos])
            beta[j] = 0.0
            del active[drop_pos]
            del signs[drop_pos]
            chol.remove(j)
            events.append(PathEvent(knot, "drop", int(j), unmodified))
            just_dropped = j
        elif entering is not None and not reached_zero:
            admit(tied(C_new) or [entering], knot)

        if C_new >= lambdas[-1] * (1.0 - TIE_TOL) and knot > 0:
            # zero-length step (simultaneous events): update the last knot
            coefs[-1] = beta.copy()
            sets[-1] = tuple(active)
            events = [e._replace(knot=knot - 1) if e.knot == knot else e for e in events]
        else:
            lambdas.append(C_new)
            coefs.append(beta.copy())
            sets.append(tuple(active))
        C = C_new
        if reached_zero or C <= 0.0:
            break
        if not active:
            # everything dropped out: restart from the largest correlation
            admit(tied(max_corr()), len(lambdas) - 1)
            sets[-1] = tuple(active)

    if lambdas[-1] > 0.0 and not active:
        lambdas.append(0.0)
        coefs.append(beta.copy())
        sets.append(())
    return LarsPath(
        np.array(lambdas), np.array(coefs), tuple(sets), tuple(events), n_samples, tuple(excluded)
    )


def lars_lasso_path(X, y) -> LarsPath:
    """Full LARS-LASSO path for standardized ``X`` and centered ``y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != len(y):
        raise ValueError("X must be (n, p) and y (n,)")
    if X.shape[0] < 2:
        raise ValueError("LARS needs at least two samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input to LARS")
    return lars_path_gram(X.T @ X, X.T @ y, X.shape[0])


def coefficients_at(path: LarsPath, lam):
    """Coefficients at regularization ``lam`` (scalar or array) by
    interpolation between the bracketing knots."""
    scalar = np.ndim(lam) == 0
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("lambda must be non-negative")
    knots = path.lambdas
    out = np.empty((len(lam), path.n_features))
    above = lam >= knots[0]
    below = lam <= knots[-1]
    out[above] = 0.0 if knots[0] > 0 else path.coefs[0]
    out[below & ~above] = path.coefs[-1]
    mid = ~above & ~below
    if mid.any():
        k = np.searchsorted(-knots, -lam[mid], side="right") - 1
        frac = (knots[k] - lam[mid]) / (knots[k] - knots[k + 1])
        out[mid] = (1.0 - frac)[:, None] * path.coefs[k] + frac[:, None] * path.coefs[k + 1]
    return out[0] if scalar else out
