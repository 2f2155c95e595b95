import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats
from sklearn.base import clone
from sklearn.linear_model import Lasso, lars_path

from _oracles import cd_lasso, mp_ols
from remitrend.sparse_regression import (
    CollinearityError,
    DegenerateFoldsError,
    FittedModel,
    LassoLarsRegressor,
    betainc,
    coefficients_at,
    fold_assignment,
    lars_lasso_path,
    ols_inference,
    patient_kfold,
    predict,
    select_lambda,
    standardize,
    student_t_two_sided,
)


def _problem(seed, n=20, p=10):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X[:, :3] @ np.array([2.0, -1.5, 1.0]) + rng.standard_normal(n)
    Z, yc, _ = standardize(X, y)
    return Z, yc


# ------------------------------------------------------------------ standardize


def test_standardize_unit_sample_sd():
    Z, yc, params = standardize([[1.0, 5.0], [3.0, 5.0]], [1.0, 3.0])
    assert Z[:, 0] == pytest.approx([-1 / np.sqrt(2), 1 / np.sqrt(2)])
    assert np.all(Z[:, 1] == 0) and params.active.tolist() == [True, False]
    assert yc.tolist() == [-1.0, 1.0] and params.y_mean == 2.0


# ------------------------------------------------------------------------ path


@pytest.mark.parametrize("seed", range(5))
def test_path_matches_sklearn_knots(seed):
    Z, yc = _problem(seed)
    path = lars_lasso_path(Z, yc)
    alphas, _, coefs = lars_path(Z, yc, method="lasso")
    assert path.alphas == pytest.approx(alphas, abs=1e-10)
    assert np.allclose(path.coefs, coefs.T, atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_path_matches_coordinate_descent(seed):
    Z, yc = _problem(100 + seed)
    path = lars_lasso_path(Z, yc)
    for lam, beta in zip(path.lambdas, path.coefs):
        if lam == 0:
            ref, gap = np.linalg.lstsq(Z, yc, rcond=None)[0], 0.0
        else:
            ref, gap = cd_lasso(Z, yc, lam, tol=1e-12)
        assert gap <= 1e-8
        assert np.max(np.abs(beta - ref)) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_kkt_along_path(seed):
    Z, yc = _problem(200 + seed, n=30, p=15)
    path = lars_lasso_path(Z, yc)
    for lam in np.linspace(path.lambdas[0], path.lambdas[-1], 25):
        beta = coefficients_at(path, lam)
        corr = Z.T @ (yc - Z @ beta)
        assert np.all(np.abs(corr) <= lam + 1e-8)
        on = beta != 0
        assert np.allclose(corr[on], lam * np.sign(beta[on]), atol=1e-8)


def test_first_knot_is_max_correlation_and_path_ends_at_ols():
    Z, yc = _problem(7, n=40, p=5)
    path = lars_lasso_path(Z, yc)
    assert path.lambdas[0] == pytest.approx(np.abs(Z.T @ yc).max())
    assert np.all(path.coefs[0] == 0)
    ols = np.linalg.lstsq(Z, yc, rcond=None)[0]
    assert path.coefs[-1] == pytest.approx(ols, abs=1e-9)
    assert np.all(np.diff(path.lambdas) < 0)


def test_orthonormal_soft_threshold():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.standard_normal((30, 6)))
    y = rng.standard_normal(30)
    path = lars_lasso_path(Q, y)
    ols = Q.T @ y
    for lam in np.linspace(0, path.lambdas[0] * 1.1, 40):
        expect = np.sign(ols) * np.maximum(np.abs(ols) - lam, 0)
        assert np.max(np.abs(coefficients_at(path, lam) - expect)) <= 1e-10


def test_drop_events_recorded():
    found = False
    for seed in range(60):
        Z, yc = _problem(seed, n=15, p=12)
        path = lars_lasso_path(Z, yc)
        drops = [e for e in path.events if e.kind == "drop"]
        for e in drops:
            before = path.coefs[e.knot - 1, e.feature]
            assert path.coefs[e.knot, e.feature] == 0.0
            assert np.sign(e.unmodified) == -np.sign(before)
        found |= bool(drops)
    assert found


def test_path_input_validation():
    with pytest.raises(ValueError):
        lars_lasso_path(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        lars_lasso_path(np.array([[np.nan], [1.0]]), np.zeros(2))
    path = lars_lasso_path(*_problem(0))
    with pytest.raises(ValueError):
        coefficients_at(path, -1.0)


# ------------------------------------------------------------------- estimator


def test_regressor_matches_sklearn_lasso_at_fixed_alpha():
    rng = np.random.default_rng(11)
    X = rng.normal(3.0, 2.0, (60, 6))
    y = X[:, 0] - 2 * X[:, 3] + rng.standard_normal(60)
    est = LassoLarsRegressor(alpha=0.2).fit(X, y)
    Z, yc, _ = standardize(X, y)
    ref = Lasso(alpha=0.2, fit_intercept=False, tol=1e-14, max_iter=100000).fit(Z, yc)
    assert est.std_coef_ == pytest.approx(ref.coef_, abs=1e-8)
    assert est.predict(X) == pytest.approx(est.to_model().predict(X[:, est.std_coef_ != 0]))


def test_regressor_sklearn_api():
    est = LassoLarsRegressor(inner_folds=4)
    assert clone(est).get_params()["inner_folds"] == 4
    rng = np.random.default_rng(2)
    X = rng.standard_normal((120, 4))
    y = (X[:, 0] + 0.3 * rng.standard_normal(120) > 1.0).astype(float)
    groups = np.repeat(np.arange(12), 10)
    est.fit(X, y, groups=groups, feature_names=list("abcd"))
    assert est.alpha_ in est.selection_.grid
    assert "a" in est.to_model().feature_names
    with pytest.raises(ValueError):
        est.predict(X[:, :2])


def test_fitted_model_serialization_and_row_prediction():
    m = FittedModel(("a", "b"), np.array([0.5, -1.0]), np.array([1.0, 2.0]),
                    np.array([2.0, 4.0]), 0.1, 0.01, 1.0, {"degree": 1})
    back = FittedModel.loads(m.dumps())
    X = np.array([[3.0, 6.0], [0.0, 0.0]])
    assert np.array_equal(back.predict(X), m.predict(X))
    assert predict(m, {"b": 6.0, "a": 3.0}) == pytest.approx(m.predict(X)[0])
    assert m.predict(X[:, ::-1], column_names=["b", "a"]) == pytest.approx(m.predict(X))
    assert m.intercept + X[0] @ m.coef == pytest.approx(m.predict(X)[0])
    with pytest.raises(KeyError):
        predict(m, {"a": 1.0})


# ---------------------------------------------------------------------- folds


def test_patient_kfold_partitions_patients():
    ids = [f"p{i}" for i in range(11)]
    folds = patient_kfold(ids, 3, seed=5)
    tests = [set(t) for _, t in folds]
    assert set().union(*tests) == set(ids)
    assert sum(len(t) for t in tests) == 11
    assert sorted(len(t) for t in tests) == [3, 4, 4]
    for train, test in folds:
        assert not set(train) & set(test)
    assert [t.tolist() for _, t in patient_kfold(ids, 3, 5)] == [sorted(t) for t in tests]


def test_fold_assignment_keeps_patients_together():
    pids = np.repeat(["a", "b", "c", "d"], 5)
    f = fold_assignment(pids, 2, seed=1)
    for p in "abcd":
        assert len(set(f[pids == p])) == 1
    with pytest.raises(ValueError):
        patient_kfold(["a", "b"], 3)


def test_select_lambda_grid_and_ties():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((150, 5))
    y = (X[:, 1] > 1.0).astype(float)
    groups = np.repeat(np.arange(15), 10)
    sel = select_lambda(X, y, groups)
    assert sel.alpha in sel.grid
    mean = np.nanmean(sel.fold_scores, axis=0)
    assert sel.score == pytest.approx(mean.max())
    assert sel.alpha == sel.grid[np.flatnonzero(mean >= mean.max() - 1e-12)[0]]
    with pytest.raises(DegenerateFoldsError):
        select_lambda(X, np.zeros(150), groups)


# ------------------------------------------------------------------------ OLS


FIXED_X = np.array([
    [1.2, -0.4, 3.1], [0.3, 1.8, 2.2], [-1.1, 0.5, 0.9], [2.4, -1.3, 1.7],
    [0.0, 0.2, -0.6], [1.7, 2.5, 0.4], [-0.8, -1.9, 2.8], [0.9, 0.7, -1.2],
    [-2.0, 1.1, 1.5], [0.5, -0.3, 0.1],
])
FIXED_Y = np.array([3.3, 1.9, -0.2, 4.8, 0.4, 2.2, 1.1, 0.7, -1.6, 1.0])


def test_ols_matches_high_precision_reference():
    res = ols_inference(FIXED_X, FIXED_Y)
    for j, (c, se, t, p) in enumerate(mp_ols(FIXED_X, FIXED_Y)):
        assert res.coef[j] == pytest.approx(float(c), rel=1e-10)
        assert res.std_err[j] == pytest.approx(float(se), rel=1e-10)
        assert abs(res.p_value[j] - float(p)) <= 1e-8


def test_t_squared_equals_partial_f():
    res = ols_inference(FIXED_X, FIXED_Y)
    for j in range(3):
        reduced = ols_inference(FIXED_X, FIXED_Y, columns=[k for k in range(3) if k != j])
        f = (reduced.rss - res.rss) / (res.rss / res.dof)
        assert res.t_stat[j] ** 2 == pytest.approx(f, rel=1e-10)


def test_ols_columns_by_name_and_collinearity():
    names = ["a", "b", "c"]
    res = ols_inference(FIXED_X, FIXED_Y, columns=["c", "a"], names=names)
    assert res.names == ("c", "a")
    X = np.column_stack([FIXED_X, FIXED_X[:, 0] - 2 * FIXED_X[:, 1]])
    with pytest.raises(CollinearityError) as info:
        ols_inference(X, FIXED_Y, names=names + ["d"])
    assert info.value.columns
    with pytest.raises(ValueError):
        ols_inference(FIXED_X[:4], FIXED_Y[:4])


def test_ols_null_p_values_roughly_uniform():
    rng = np.random.default_rng(0)
    p = [ols_inference(rng.standard_normal((50, 2)), rng.standard_normal(50)).p_value[0]
         for _ in range(300)]
    assert stats.kstest(p, "uniform").pvalue > 0.001


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(float(special.betainc(a, b, x)), abs=1e-12)


@pytest.mark.parametrize("t, dof", [(0.0, 5), (1.3, 7), (-2.5, 3), (10.0, 40), (0.2, 1)])
def test_student_t_two_sided(t, dof):
    assert student_t_two_sided(t, dof) == pytest.approx(2 * stats.t.sf(abs(t), dof), abs=1e-13)
