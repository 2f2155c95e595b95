import numpy as np
import pytest

from remitrend.data_model import EventKind, SignalKind, validate_record
from remitrend.simulator import (
    PlantedPolicy,
    SimConfig,
    generate_cohort,
    policy_oracle_labels,
    target_change_log,
)

QUIET = {"SAP": 0.0, "MAP": 0.0, "DAP": 0.0, "HR": 0.0, "BIS": 0.0}


def _quiet(**kw):
    base = dict(n_patients=1, seed=0, case_duration=3600.0, stimulus_rate=0.0,
                noise_sd=QUIET, sap_between_sd=0.0, initial_targets=(3.0,))
    base.update(kw)
    return SimConfig(**base)


def test_same_seed_identical(small_cohort):
    again = generate_cohort(SimConfig(12, seed=3))
    for a, b in zip(small_cohort, again):
        assert a.statics == b.statics
        for k in SignalKind:
            assert np.array_equal(a[k].values, b[k].values)


def test_parallel_matches_serial(small_cohort):
    par = generate_cohort(SimConfig(12, seed=3), jobs=2)
    for a, b in zip(small_cohort, par):
        assert np.array_equal(a[SignalKind.SAP].values, b[SignalKind.SAP].values)


def test_different_seed_differs(small_cohort):
    other = generate_cohort(SimConfig(12, seed=4))
    assert not np.array_equal(small_cohort[0][SignalKind.SAP].values,
                              other[0][SignalKind.SAP].values)


def test_records_are_valid_with_incision(small_cohort):
    for rec in small_cohort:
        assert validate_record(rec) == []
        assert rec.first_event(EventKind.INCISION).time == 600.0
        assert rec.grid_step() == 30.0


def test_replayed_policy_matches_stored_targets(small_cohort):
    policy = PlantedPolicy()
    total = 0
    for rec in small_cohort:
        log = target_change_log(rec)
        assert log == pytest.approx(policy_oracle_labels(rec, policy))
        total += len(log)
    assert total > 0


def test_both_directions_occur(small_cohort):
    steps = [d for rec in small_cohort for _, d in target_change_log(rec)]
    assert any(d > 0 for d in steps) and any(d < 0 for d in steps)
    assert all(abs(abs(d) - 0.5) < 1e-9 for d in steps)


def test_targets_stay_in_range(small_cohort):
    for rec in small_cohort:
        v = rec[SignalKind.REMI_TARGET].values
        assert v.min() >= 2.0 - 1e-12 and v.max() <= 6.0 + 1e-12


def test_quiet_case_never_changes():
    rec = generate_cohort(_quiet(sap_mean=130.0))[0]
    assert target_change_log(rec) == []
    assert np.ptp(rec[SignalKind.SAP].values) == 0.0


def test_forced_surge_triggers_increase():
    cfg = _quiet(sap_mean=130.0, forced_surges=((1800.0, 45.0),))
    log = target_change_log(generate_cohort(cfg)[0])
    assert log and log[0][1] == pytest.approx(0.5)
    delay = cfg.policy.reaction_delay
    assert 1800.0 < log[0][0] <= 1800.0 + cfg.surge_rise + delay


def test_low_flat_pressure_walks_target_down():
    cfg = _quiet(sap_mean=100.0, initial_targets=(4.0,))
    rec = generate_cohort(cfg)[0]
    log = target_change_log(rec)
    assert [d for _, d in log] == pytest.approx([-0.5] * 4)
    assert rec[SignalKind.REMI_TARGET].values[-1] == pytest.approx(2.0)
    gaps = np.diff([t for t, _ in log])
    assert np.all(gaps >= cfg.policy.refractory + cfg.policy.reaction_delay)


@pytest.mark.parametrize("kw", [
    dict(n_patients=0),
    dict(n_patients=2, stimulus_rate=-1.0),
    dict(n_patients=2, noise_sd={"SAP": -1.0}),
    dict(n_patients=2, policy=PlantedPolicy(reaction_delay=45.0)),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_policy_validation():
    with pytest.raises(ValueError):
        PlantedPolicy(target_min=5.0, target_max=4.0)
