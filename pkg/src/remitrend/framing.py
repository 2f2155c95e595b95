"""Sliding observation/prediction windows over gridded case records."""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_model import EventKind, PatientRecord, Segment, SignalKind

__all__ = [
    "Direction",
    "FramingConfig",
    "EXCLUSION_RULES",
    "DEFAULT_ANALGESIC_DRUGS",
    "enumerate_segments",
    "apply_exclusions",
    "build_direction_dataset",
    "frame_record",
    "prevalence",
    "write_segments_csv",
    "read_segments_csv",
]

CHANGE_TOL = 1e-9

EXCLUSION_RULES = ("initial_target", "pre_incision", "multiple_changes", "obs_change", "bolus")

DEFAULT_ANALGESIC_DRUGS = (
    "fentanyl", "sufentanil", "alfentanil", "morphine", "ketamine", "remifentanil",
)


class Direction(str, enum.Enum):
    INCREASE = "increase"
    DECREASE = "decrease"


@dataclass(frozen=True)
class FramingConfig:
    """Window geometry in seconds.

    ``min_change`` is the smallest target step (ng/mL) counted as a change;
    the default 0 counts any step beyond float noise.
    """

    obs_len: float
    pred_len: float
    stride: float = 30.0
    direction: Direction = Direction.INCREASE
    incision_guard: float = 300.0
    min_change: float = 0.0
    analgesic_drugs: tuple = DEFAULT_ANALGESIC_DRUGS

    def __post_init__(self):
        for name in ("obs_len", "pred_len", "stride"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.incision_guard < 0 or self.min_change < 0:
            raise ValueError("incision_guard and min_change must be non-negative")
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "analgesic_drugs", tuple(self.analgesic_drugs))


def _change_tol(config: FramingConfig) -> float:
    return max(CHANGE_TOL, config.min_change - CHANGE_TOL)


class _TargetTrack:
    """Step-valued target with its change times, for window queries."""

    def __init__(self, record: PatientRecord, tol: float):
        remi = record[SignalKind.REMI_TARGET]
        self.times = np.asarray(remi.timestamps)
        self.values = np.asarray(remi.values)
        jumps = np.abs(np.diff(self.values)) > tol
        self.change_times = self.times[1:][jumps]
        nonzero = np.flatnonzero(np.abs(self.values) > CHANGE_TOL)
        if len(nonzero) == 0:
            self.initial_time = np.inf
        else:
            # the initial setting is the first time the pump target is nonzero
            self.initial_time = float(self.times[nonzero[0]])

    def value_at(self, t):
        idx = np.searchsorted(self.times, np.asarray(t) + 1e-9, side="right") - 1
        return self.values[np.maximum(idx, 0)]

    def count_changes(self, lo, hi):
        """Changes with time in the half-open interval ``(lo, hi]``."""
        ct = self.change_times
        return np.searchsorted(ct, np.asarray(hi) + 1e-9, side="right") - np.searchsorted(
            ct, np.asarray(lo) + 1e-9, side="right"
        )


def _window_starts(duration: float, config: FramingConfig) -> np.ndarray:
    span = config.obs_len + config.pred_len
    if span > duration + 1e-9:
        return np.zeros(0)
    n = int(np.floor((duration - span) / config.stride + 1e-9)) + 1
    return np.arange(n) * config.stride


def enumerate_segments(record: PatientRecord, config: FramingConfig) -> list:
    """All raw windows of ``record`` ordered by start time, with signed labels.

    The label is the target at the end of the prediction window minus the
    target at the end of the observation window.
    """
    step = record.grid_step()
    if step is None:
        raise ValueError(f"record {record.id} is not on a uniform grid")
    ratio = config.stride / step
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError(f"grid step {step} does not divide stride {config.stride}")
    starts = _window_starts(record.duration, config)
    if len(starts) == 0:
        return []
    track = _TargetTrack(record, _change_tol(config))
    obs_end = starts + config.obs_len
    pred_end = obs_end + config.pred_len
    labels = track.value_at(pred_end) - track.value_at(obs_end)
    labels = np.where(np.abs(labels) > _change_tol(config), labels, 0.0)
    return [
        Segment(record.id, float(s), float(o), float(p), float(lab))
        for s, o, p, lab in zip(starts, obs_end, pred_end, labels)
    ]


def _rule_masks(segments: Sequence[Segment], record: PatientRecord, config: FramingConfig):
    track = _TargetTrack(record, _change_tol(config))
    obs_start = np.array([s.obs_start for s in segments])
    obs_end = np.array([s.obs_end for s in segments])
    pred_end = np.array([s.pred_end for s in segments])

    masks = {}
    masks["initial_target"] = obs_end < track.initial_time - 1e-9
    incision = record.first_event(EventKind.INCISION)
    if incision is None:
        masks["pre_incision"] = np.zeros(len(segments), dtype=bool)
    else:
        lo = incision.time - config.incision_guard
        masks["pre_incision"] = (obs_end < incision.time - 1e-9) & (pred_end >= lo - 1e-9)
    masks["multiple_changes"] = track.count_changes(obs_end, pred_end) >= 2
    masks["obs_change"] = track.count_changes(obs_start, obs_end) >= 1
    bolus_times = np.array(
        [e.time for e in record.events if e.is_bolus_of(config.analgesic_drugs)]
    )
    if len(bolus_times) == 0:
        masks["bolus"] = np.zeros(len(segments), dtype=bool)
    else:
        masks["bolus"] = np.any(
            (bolus_times[None, :] >= obs_start[:, None] - 1e-9)
            & (bolus_times[None, :] <= pred_end[:, None] + 1e-9),
            axis=1,
        )
    return masks


def apply_exclusions(segments: Sequence[Segment], record: PatientRecord, config: FramingConfig):
    """Remove segments violating the exclusion rules, in rule order.

    Returns the kept segments and a :class:`collections.Counter` of removals
    keyed by the first matching rule name (see ``EXCLUSION_RULES``).
    """
    counts = Counter({rule: 0 for rule in EXCLUSION_RULES})
    if len(segments) == 0:
        return [], counts
    masks = _rule_masks(segments, record, config)
    removed = np.zeros(len(segments), dtype=bool)
    for rule in EXCLUSION_RULES:
        hit = masks[rule] & ~removed
        counts[rule] += int(hit.sum())
        removed |= hit
    kept = [s for s, r in zip(segments, removed) if not r]
    return kept, counts


def build_direction_dataset(segments: Iterable[Segment], direction) -> list:
    """Keep no-change segments plus changes of the requested sign.

    Decrease labels are turned into magnitudes so both problems predict a
    non-negative change size.
    """
    direction = Direction(direction)
    out = []
    for s in segments:
        if direction is Direction.INCREASE:
            if s.label >= 0:
                out.append(s)
        elif s.label <= 0:
            out.append(Segment(s.patient_id, s.obs_start, s.obs_end, s.pred_end, abs(s.label)))
    return out


def frame_record(record: PatientRecord, config: FramingConfig):
    """Enumerate, exclude and orient the segments of one record."""
    raw = enumerate_segments(record, config)
    kept, counts = apply_exclusions(raw, record, config)
    return build_direction_dataset(kept, config.direction), counts, len(raw)


def prevalence(segments) -> float:
    """Fraction of segments (or labels) with a nonzero change."""
    labels = np.array([getattr(s, "label", s) for s in segments], dtype=float)
    if len(labels) == 0:
        raise ValueError("prevalence of an empty segment set is undefined")
    return float(np.mean(np.abs(labels) > CHANGE_TOL))


SEGMENT_COLUMNS = ("patient_id", "obs_start_s", "obs_end_s", "pred_end_s", "label")


def write_segments_csv(segments: Iterable[Segment], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SEGMENT_COLUMNS)
        for s in segments:
            writer.writerow([s.patient_id, repr(s.obs_start), repr(s.obs_end),
                             repr(s.pred_end), repr(s.label)])


def read_segments_csv(path) -> list:
    with open(Path(path), encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SEGMENT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [Segment(r[0], float(r[1]), float(r[2]), float(r[3]), float(r[4]))
                for r in reader]
