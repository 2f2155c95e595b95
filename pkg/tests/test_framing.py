import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import EXCLUSION_COUNTS, EXCLUSION_KEPT, exclusion_case, make_record
from remitrend.data_model import CaseEvent, EventKind, Segment
from remitrend.framing import (
    EXCLUSION_RULES,
    Direction,
    FramingConfig,
    apply_exclusions,
    build_direction_dataset,
    enumerate_segments,
    frame_record,
    prevalence,
    read_segments_csv,
    write_segments_csv,
)

CFG = FramingConfig(obs_len=60, pred_len=60)


def test_window_count_and_spacing():
    segs = enumerate_segments(make_record(duration=1800), CFG)
    assert len(segs) == 57
    assert segs[0].obs_start == 0 and segs[-1].pred_end == 1800
    assert np.all(np.diff([s.obs_start for s in segs]) == 30)


def test_too_short_case_has_no_windows():
    assert enumerate_segments(make_record(duration=90), CFG) == []


def test_stride_must_fit_grid():
    with pytest.raises(ValueError):
        enumerate_segments(make_record(), FramingConfig(60, 60, stride=45))


def test_signed_labels():
    rec = make_record(target={0: 3.0, 600: 3.5, 1200: 3.0})
    labels = {s.obs_end: s.label for s in enumerate_segments(rec, CFG)}
    assert labels[540] == pytest.approx(0.5)
    assert labels[600] == 0.0  # the change sits at obs_end, not after it
    assert labels[1140] == pytest.approx(-0.5)
    assert labels[300] == 0.0


def test_hand_counted_exclusions():
    rec = exclusion_case()
    kept, counts = apply_exclusions(enumerate_segments(rec, CFG), rec, CFG)
    assert dict(counts) == EXCLUSION_COUNTS
    assert len(kept) == EXCLUSION_KEPT
    assert tuple(counts) == EXCLUSION_RULES


def test_counts_attribute_first_rule_only():
    # a bolus before incision: windows hit by both count once, as pre_incision
    rec = make_record(events=(CaseEvent(EventKind.INCISION, 900.0),
                              CaseEvent(EventKind.BOLUS, 800.0, "Fentanyl")))
    raw = enumerate_segments(rec, CFG)
    kept, counts = apply_exclusions(raw, rec, CFG)
    assert sum(counts.values()) + len(kept) == len(raw)
    # windows k 23-26 contain the bolus and all lie in the pre-incision band
    assert counts["bolus"] == 0
    assert counts["pre_incision"] == 12


def test_no_incision_disables_rule():
    rec = make_record()
    _, counts = apply_exclusions(enumerate_segments(rec, CFG), rec, CFG)
    assert sum(counts.values()) == 0


def test_direction_datasets():
    segs = [Segment("p", 0, 60, 120, v) for v in (0.0, 0.5, -0.5, 0.0)]
    up = build_direction_dataset(segs, Direction.INCREASE)
    down = build_direction_dataset(segs, "decrease")
    assert [s.label for s in up] == [0.0, 0.5, 0.0]
    assert [s.label for s in down] == [0.0, 0.5, 0.0]


def test_frame_record_and_prevalence():
    rec = make_record(target={0: 3.0, 900: 3.5})
    segs, counts, n_raw = frame_record(rec, CFG)
    assert n_raw == 57
    assert prevalence(segs) == pytest.approx(2 / len(segs))
    with pytest.raises(ValueError):
        prevalence([])


def test_segments_csv_round_trip(tmp_path):
    segs = enumerate_segments(make_record(target={0: 3.0, 900: 3.5}), CFG)
    write_segments_csv(segs, tmp_path / "s.csv")
    assert read_segments_csv(tmp_path / "s.csv") == segs


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 58), st.sampled_from([-0.5, 0.5])), max_size=6),
       st.integers(0, 59), st.sampled_from([30, 60, 120]), st.sampled_from([30, 60, 300]))
def test_exclusion_partition(changes, incision_k, obs_len, pred_len):
    target = {0: 3.0}
    level = 3.0
    for k, d in sorted(set(changes)):
        level += d
        target[30 * k] = level
    rec = make_record(duration=1800, target=target,
                      events=(CaseEvent(EventKind.INCISION, 30.0 * incision_k),))
    cfg = FramingConfig(obs_len, pred_len)
    raw = enumerate_segments(rec, cfg)
    kept, counts = apply_exclusions(raw, rec, cfg)
    assert len(kept) + sum(counts.values()) == len(raw)
    for s in kept:
        # kept windows carry at most one change, none inside the observation
        assert abs(s.label) in (0.0, 0.5)
