import numpy as np
import pytest

from remitrend.data_model import (
    CaseEvent,
    EventKind,
    FeatureMatrix,
    PatientRecord,
    Segment,
    SignalKind,
    VitalSeries,
    validate_record,
)


def test_six_signal_kinds_with_units():
    assert len(SignalKind) == 6
    assert SignalKind.SAP.unit == "mmHg"
    assert SignalKind.REMI_TARGET.unit == "ng/mL"


def test_valid_record_has_no_violations(record_factory):
    assert validate_record(record_factory()) == []


def test_missing_dap_reported(record_factory):
    rec = record_factory()
    series = {k: v for k, v in rec.series.items() if k is not SignalKind.DAP}
    broken = PatientRecord(rec.statics, series, rec.events, rec.duration)
    assert "missing signal DAP" in validate_record(broken)


def test_repeated_timestamp_reported(record_factory):
    rec = record_factory()
    series = dict(rec.series)
    series[SignalKind.HR] = VitalSeries(SignalKind.HR, [0.0, 30.0, 30.0], [1.0, 2.0, 3.0])
    problems = validate_record(PatientRecord(rec.statics, series, rec.events, rec.duration))
    assert any("non-increasing timestamps" in p for p in problems)


def test_validate_is_pure(record_factory):
    rec = record_factory(bmi=3.0)
    assert validate_record(rec) == validate_record(rec)
    assert validate_record(rec)


def test_value_at_carries_forward():
    s = VitalSeries(SignalKind.REMI_TARGET, [0.0, 30.0, 60.0], [4.0, 4.0, 4.2])
    assert s.value_at(45.0) == 4.0
    assert s.value_at(60.0) == 4.2
    assert s.grid_step() == 30.0


def test_series_arrays_are_read_only():
    s = VitalSeries(SignalKind.HR, [0.0, 1.0], [60.0, 61.0])
    with pytest.raises(ValueError):
        s.values[0] = 1.0


def test_bolus_matching_is_case_insensitive():
    e = CaseEvent(EventKind.BOLUS, 10.0, "Ephedrine")
    assert e.is_bolus_of(("ephedrine",))
    assert not CaseEvent(EventKind.INCISION, 10.0).is_bolus_of(("ephedrine",))


def test_events_sorted_and_first_event(record_factory):
    events = (CaseEvent(EventKind.INCISION, 900.0), CaseEvent(EventKind.INCISION, 600.0))
    rec = record_factory(events=events)
    assert rec.first_event(EventKind.INCISION).time == 600.0
    assert rec.first_event(EventKind.ECC_START) is None


@pytest.mark.parametrize("bounds", [(10, 10, 20), (0, 20, 10)])
def test_segment_bounds_validated(bounds):
    with pytest.raises(ValueError):
        Segment("p", *bounds, 0.0)


def test_feature_matrix_validation():
    with pytest.raises(ValueError):
        FeatureMatrix(("a", "b"), np.zeros((2, 3)), [0, 0], ["x", "y"])
    with pytest.raises(ValueError):
        FeatureMatrix(("a",), np.array([[np.nan]]), [0], ["x"])
    with pytest.raises(ValueError):
        FeatureMatrix(("a", "a"), np.zeros((1, 2)), [0], ["x"])
    m = FeatureMatrix(("a", "b"), np.arange(6.0).reshape(3, 2), [0, 1, 0], ["x", "y", "z"])
    assert m.select_columns(["b"]).rows.tolist() == [[1.0], [3.0], [5.0]]
    assert len(m.take([0, 2])) == 2
