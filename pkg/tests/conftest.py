import numpy as np
import pytest

from remitrend.data_model import (
    CaseEvent,
    EventKind,
    PatientRecord,
    PatientStatics,
    Sex,
    SignalKind,
    VitalSeries,
)
from remitrend.simulator import SimConfig, generate_cohort


def make_record(pid="p1", duration=1800.0, step=30.0, target=None, events=(), age=50,
                sap=None, **statics):
    """Gridded record with flat vitals; ``target`` maps time -> new value."""
    grid = np.arange(0.0, duration + 1e-9, step)
    remi = np.full(len(grid), 3.0)
    if target:
        for t, v in sorted(target.items()):
            remi[grid >= t] = v
    base = {
        SignalKind.BIS: 45.0, SignalKind.HR: 70.0, SignalKind.SAP: 120.0,
        SignalKind.MAP: 90.0, SignalKind.DAP: 70.0,
    }
    series = {k: VitalSeries(k, grid, np.full(len(grid), v)) for k, v in base.items()}
    if sap is not None:
        series[SignalKind.SAP] = VitalSeries(SignalKind.SAP, grid, sap(grid))
    series[SignalKind.REMI_TARGET] = VitalSeries(SignalKind.REMI_TARGET, grid, remi)
    st = PatientStatics(pid, age, statics.pop("bmi", 24.0), statics.pop("asa", 2),
                        statics.pop("sex", Sex.FEMALE), **statics)
    return PatientRecord(st, series, tuple(events), float(grid[-1]))


_VERDICTS = []


@pytest.fixture
def verdict():
    """Print and keep one PASS/FAIL line per acceptance criterion."""

    def emit(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        print(line)
        _VERDICTS.append((number, line))
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(SimConfig(12, seed=3))


@pytest.fixture
def incision():
    return CaseEvent(EventKind.INCISION, 600.0)


# Hand-counted exclusion case: 57 raw windows (obs 60 s, pred 60 s, stride 30 s).
#   initial_target    k 0-7   obs_end before the first nonzero target at 300 s
#   pre_incision      k 16-27 obs_end < 900 and pred_end >= 600
#   multiple_changes  k 37    changes at 1200 and 1230 both in (1170, 1230]
#   obs_change        k 8, 9, 38, 39, 40, 48, 49
#   bolus             k 51-55 fentanyl at 1650; propofol is not an analgesic
EXCLUSION_COUNTS = {"initial_target": 8, "pre_incision": 12, "multiple_changes": 1,
                    "obs_change": 7, "bolus": 5}
EXCLUSION_KEPT = 24


def exclusion_case():
    events = (
        CaseEvent(EventKind.INCISION, 900.0),
        CaseEvent(EventKind.BOLUS, 1000.0, "propofol"),
        CaseEvent(EventKind.BOLUS, 1650.0, "fentanyl"),
    )
    target = {0: 0.0, 300: 3.0, 750: 3.5, 1200: 4.0, 1230: 4.5, 1500: 4.0}
    return make_record("hand", duration=1800, target=target, events=events)
