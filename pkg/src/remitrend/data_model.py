"""Shared domain types for anesthesia case records and framed segments.

All times are seconds from case start. Every type is a frozen value object;
series arrays are stored read-only so records can be shared freely.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SignalKind",
    "Sex",
    "EventKind",
    "PatientStatics",
    "VitalSeries",
    "CaseEvent",
    "PatientRecord",
    "Segment",
    "FeatureMatrix",
    "DEFAULT_CONFOUNDER_DRUGS",
    "validate_record",
]

DEFAULT_CONFOUNDER_DRUGS = (
    "propofol",
    "midazolam",
    "fentanyl",
    "ephedrine",
    "phenylephrine",
    "epinephrine",
    "sufentanil",
)


class SignalKind(str, enum.Enum):
    """The six derived signals used by the pipeline.

    Values double as the signal names of the vitals CSV and as feature-name
    prefixes.
    """

    BIS = "BIS"
    HR = "HR"
    SAP = "SAP"
    MAP = "MAP"
    DAP = "DAP"
    REMI_TARGET = "REMI_TARGET"

    @property
    def unit(self) -> str:
        return _UNITS[self]


_UNITS = {
    SignalKind.BIS: "",
    SignalKind.HR: "beats/min",
    SignalKind.SAP: "mmHg",
    SignalKind.MAP: "mmHg",
    SignalKind.DAP: "mmHg",
    SignalKind.REMI_TARGET: "ng/mL",
}


class Sex(str, enum.Enum):
    FEMALE = "female"
    MALE = "male"


class EventKind(str, enum.Enum):
    INCISION = "INCISION"
    BOLUS = "BOLUS"
    ECC_START = "ECC_START"


@dataclass(frozen=True)
class PatientStatics:
    id: str
    age: int
    bmi: float
    asa: int
    sex: Sex
    invasive_ap: bool = True
    tci_remi: bool = True


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VitalSeries:
    """One signal sampled at (not necessarily uniform) timestamps."""

    kind: SignalKind
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", SignalKind(self.kind))
        object.__setattr__(self, "timestamps", _readonly(self.timestamps))
        object.__setattr__(self, "values", _readonly(self.values))

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VitalSeries):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def grid_step(self) -> Optional[float]:
        """Sampling step if the series sits on a uniform grid anchored at 0."""
        ts = self.timestamps
        if len(ts) < 2:
            return None
        steps = np.diff(ts)
        step = float(steps[0])
        if step <= 0 or not np.allclose(steps, step, rtol=0, atol=1e-9):
            return None
        if abs(ts[0] / step - round(ts[0] / step)) > 1e-9:
            return None
        return step

    def value_at(self, t: float) -> float:
        """Last observation at or before ``t`` (first value for earlier ``t``)."""
        i = int(np.searchsorted(self.timestamps, t + 1e-9, side="right")) - 1
        return float(self.values[max(i, 0)])


@dataclass(frozen=True)
class CaseEvent:
    kind: EventKind
    time: float
    drug: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        object.__setattr__(self, "time", float(self.time))

    def is_bolus_of(self, drugs: Sequence[str]) -> bool:
        if self.kind is not EventKind.BOLUS:
            return False
        wanted = {d.strip().lower() for d in drugs}
        return self.drug.strip().lower() in wanted


@dataclass(frozen=True)
class PatientRecord:
    statics: PatientStatics
    series: dict
    events: tuple = ()
    duration: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "series", {SignalKind(k): v for k, v in dict(self.series).items()}
        )
        object.__setattr__(
            self, "events", tuple(sorted(self.events, key=lambda e: (e.time, e.kind.value)))
        )
        object.__setattr__(self, "duration", float(self.duration))

    @property
    def id(self) -> str:
        return self.statics.id

    def __getitem__(self, kind) -> VitalSeries:
        return self.series[SignalKind(kind)]

    def first_event(self, kind: EventKind) -> Optional[CaseEvent]:
        for event in self.events:
            if event.kind is kind:
                return event
        return None

    def grid_step(self) -> Optional[float]:
        """Common uniform step shared by all six series, if any."""
        steps = set()
        for kind in SignalKind:
            series = self.series.get(kind)
            if series is None:
                return None
            step = series.grid_step()
            if step is None:
                return None
            steps.add(round(step, 9))
        return steps.pop() if len(steps) == 1 else None


@dataclass(frozen=True)
class Segment:
    patient_id: str
    obs_start: float
    obs_end: float
    pred_end: float
    label: float

    def __post_init__(self):
        if not self.obs_start < self.obs_end < self.pred_end:
            raise ValueError(
                f"segment bounds must satisfy obs_start < obs_end < pred_end, got "
                f"{self.obs_start}, {self.obs_end}, {self.pred_end}"
            )


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Named feature columns with labels and per-row patient ids."""

    column_names: tuple
    rows: np.ndarray
    labels: np.ndarray
    patient_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        names = tuple(str(c) for c in self.column_names)
        rows = _readonly(self.rows)
        if rows.ndim == 1 and len(names) == 0:
            rows = rows.reshape(len(rows), 0)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-d array")
        labels = _readonly(self.labels)
        ids = self.patient_ids
        if ids is None:
            ids = np.zeros(len(labels), dtype=str)
        ids = _readonly(ids, dtype=object)
        if rows.shape[1] != len(names):
            raise ValueError(f"{rows.shape[1]} columns but {len(names)} names")
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        if not (rows.shape[0] == len(labels) == len(ids)):
            raise ValueError("rows, labels and patient_ids must have equal length")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(labels))):
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "patient_ids", ids)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.column_names)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.column_names.index(name)]

    def take(self, index) -> "FeatureMatrix":
        index = np.asarray(index)
        return FeatureMatrix(
            self.column_names, self.rows[index], self.labels[index], self.patient_ids[index]
        )

    def select_columns(self, names: Sequence[str]) -> "FeatureMatrix":
        cols = [self.column_names.index(n) for n in names]
        return FeatureMatrix(tuple(names), self.rows[:, cols], self.labels, self.patient_ids)

    def with_labels(self, labels) -> "FeatureMatrix":
        return FeatureMatrix(self.column_names, self.rows, labels, self.patient_ids)


def validate_record(record: PatientRecord) -> list:
    """Return every invariant violation of ``record``; empty means valid."""
    problems = []
    st = record.statics
    if not 5 < st.bmi < 100:
        problems.append(f"bmi {st.bmi} outside (5, 100)")
    if not 1 <= st.asa <= 5:
        problems.append(f"asa {st.asa} outside [1, 5]")
    if st.age < 0:
        problems.append(f"negative age {st.age}")
    max_time = 0.0
    for kind in SignalKind:
        series = record.series.get(kind)
        if series is None:
            problems.append(f"missing signal {kind.value}")
            continue
        ts, vs = series.timestamps, series.values
        if len(ts) != len(vs):
            problems.append(f"{kind.value}: {len(ts)} timestamps but {len(vs)} values")
            continue
        if len(ts) == 0:
            problems.append(f"{kind.value}: empty series")
            continue
        if np.any(np.diff(ts) <= 0):
            problems.append(f"{kind.value}: non-increasing timestamps")
        if ts[0] < 0:
            problems.append(f"{kind.value}: negative timestamp")
        if not np.all(np.isfinite(vs)) or not np.all(np.isfinite(ts)):
            problems.append(f"{kind.value}: non-finite values")
        max_time = max(max_time, float(np.max(ts)))
    if record.duration < max_time:
        problems.append(f"duration {record.duration} shorter than last sample {max_time}")
    for event in record.events:
        if not 0 <= event.time <= record.duration:
            problems.append(f"event {event.kind.value} at {event.time} outside case")
    return problems
