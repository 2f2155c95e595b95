import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_record
from remitrend.data_model import FeatureMatrix, Segment
from remitrend.features import (
    BASE_FEATURE_NAMES,
    PolynomialAugmenter,
    ZScoreFilter,
    build_feature_matrix,
    build_features,
    fit_trend,
    polynomial_augment,
    polynomial_names,
    read_feature_matrix_csv,
    trend_batch,
    write_feature_matrix_csv,
    zscore_filter,
)
from remitrend.framing import FramingConfig, enumerate_segments


def test_constant_window():
    tf = fit_trend([0, 30, 60], [5.0, 5.0, 5.0])
    assert (tf.intercept, tf.slope, tf.resid_std) == (5.0, 0.0, 0.0)


def test_exact_line_in_minutes():
    t = np.array([120.0, 150.0, 180.0, 210.0])
    tf = fit_trend(t, 7.0 + 2.0 * (t - 120.0) / 60.0)
    assert tf.intercept == pytest.approx(7.0, abs=1e-12)
    assert tf.slope == pytest.approx(2.0, abs=1e-12)
    assert tf.resid_std == pytest.approx(0.0, abs=1e-12)


def test_population_residual_sd():
    # residuals of (0,0,3) against its fit are (0.5, -1, 0.5)
    tf = fit_trend([0, 60, 120], [0.0, 0.0, 3.0])
    assert tf.resid_std == pytest.approx(np.sqrt(0.5))


@pytest.mark.parametrize("t, v", [([0], [1.0]), ([0, 0], [1.0, 2.0]), ([0, 1], [1.0])])
def test_fit_trend_rejects_degenerate(t, v):
    with pytest.raises(ValueError):
        fit_trend(t, v)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=20))
def test_batch_matches_scalar(values):
    t = np.arange(len(values)) * 30.0
    tf = fit_trend(t, values)
    i, s, r = trend_batch(t, np.array([values]))
    assert i[0] == pytest.approx(tf.intercept, rel=1e-9, abs=1e-9)
    assert s[0] == pytest.approx(tf.slope, rel=1e-9, abs=1e-9)
    assert r[0] == pytest.approx(tf.resid_std, rel=1e-7, abs=1e-7)


def test_build_features_names_and_statics():
    rec = make_record(sap=lambda g: 100.0 + g / 60.0, age=61, bmi=30.5, asa=3)
    f = build_features(Segment(rec.id, 300, 420, 480, 0.0), rec)
    assert tuple(f) == BASE_FEATURE_NAMES and len(f) == 21
    assert f["SAP_intercept"] == pytest.approx(105.0)
    assert f["SAP_slope"] == pytest.approx(1.0)
    assert (f["age"], f["bmi"], f["asa"]) == (61.0, 30.5, 3.0)


def test_matrix_fast_path_matches_per_segment():
    rng = np.random.default_rng(1)
    recs = [make_record(f"p{i}", sap=lambda g: 120 + rng.normal(0, 5, len(g))) for i in range(3)]
    segs = [s for r in recs for s in enumerate_segments(r, FramingConfig(120, 60))]
    segs = segs[::-1]  # caller order must survive
    m = build_feature_matrix(segs, recs)
    byid = {r.id: r for r in recs}
    slow = np.array([list(build_features(s, byid[s.patient_id]).values()) for s in segs])
    assert np.allclose(m.rows, slow, rtol=1e-10, atol=1e-10)
    assert list(m.patient_ids) == [s.patient_id for s in segs]


def test_features_depend_only_on_own_record():
    a = make_record("a", sap=lambda g: 120 + np.sin(g))
    segs = enumerate_segments(a, FramingConfig(60, 60))
    alone = build_feature_matrix(segs, [a])
    both = build_feature_matrix(segs, [a, make_record("b", sap=lambda g: 10 * g)])
    assert np.array_equal(alone.rows, both.rows)


def test_zscore_uses_sample_sd():
    # (1, 3): mean 2, sample sd sqrt(2), z = +-0.7071
    z = ZScoreFilter().fit([[1.0], [3.0]]).zscores([[1.0], [3.0]])
    assert z.ravel() == pytest.approx([-1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_zscore_filter_drops_and_ignores_constant():
    rows = np.column_stack([np.r_[np.zeros(99), 100.0], np.ones(100)])
    m = FeatureMatrix(("a", "b"), rows, np.zeros(100), ["p"] * 100)
    kept, dropped = zscore_filter(m, 5.0)
    assert dropped.tolist() == [99] and len(kept) == 99


def test_zscore_training_stats_and_clamp():
    f = ZScoreFilter(2.0).fit([[0.0], [2.0], [4.0]])
    assert f.outlier_mask([[100.0], [2.0]]).tolist() == [True, False]
    assert f.transform([[100.0], [-100.0], [1.0]]).ravel().tolist() == [6.0, -2.0, 1.0]


def test_polynomial_names_and_values():
    assert polynomial_names(["a", "b"], 2) == ["a", "b", "a^2", "a*b", "b^2"]
    assert len(polynomial_names(list("abc"), 3)) == 19
    aug = PolynomialAugmenter(2).fit([[2.0, 3.0]], feature_names=["a", "b"])
    assert aug.transform([[2.0, 3.0]]).tolist() == [[2.0, 3.0, 4.0, 6.0, 9.0]]


def test_polynomial_augment_degree_one_is_identity():
    m = FeatureMatrix(("a",), [[1.0]], [0.0], ["p"])
    assert polynomial_augment(m, 1) is m
    with pytest.raises(ValueError):
        polynomial_augment(m, 0)


def test_feature_csv_round_trip(tmp_path):
    m = FeatureMatrix(("a", "b"), [[0.1, 1 / 3], [2.0, -5e-300]], [0.0, 0.5], ["p", "q"])
    write_feature_matrix_csv(m, tmp_path / "f.csv")
    back = read_feature_matrix_csv(tmp_path / "f.csv")
    assert np.array_equal(back.rows, m.rows) and back.column_names == m.column_names
    assert list(back.patient_ids) == ["p", "q"] and np.array_equal(back.labels, m.labels)
