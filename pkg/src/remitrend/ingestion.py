"""Cohort CSV reading/writing, grid resampling and inclusion criteria."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .data_model import (
    DEFAULT_CONFOUNDER_DRUGS,
    CaseEvent,
    EventKind,
    PatientRecord,
    PatientStatics,
    Sex,
    SignalKind,
    VitalSeries,
    validate_record,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CohortFormatError",
    "CohortSource",
    "InclusionCriteria",
    "load_cohort",
    "write_cohort",
    "resample_series",
    "apply_inclusion",
    "truncate_at_ecc",
    "VITALS_COLUMNS",
    "STATICS_COLUMNS",
    "EVENTS_COLUMNS",
]

VITALS_COLUMNS = ("patient_id", "time_s", "signal", "value")
STATICS_COLUMNS = (
    "patient_id", "age", "bmi", "asa", "sex", "duration_s", "invasive_ap", "tci_remi",
)
EVENTS_COLUMNS = ("patient_id", "time_s", "event", "drug")

_PRESSURES = (SignalKind.SAP, SignalKind.MAP, SignalKind.DAP)


class CohortFormatError(ValueError):
    """Malformed cohort file; the message names file, line and column."""


@dataclass(frozen=True)
class CohortSource:
    vitals_path: Path
    statics_path: Path
    events_path: Path
    grid_step: float = 30.0
    min_pressure_coverage: float = 0.9

    def __post_init__(self):
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        if not 0 <= self.min_pressure_coverage <= 1:
            raise ValueError("min_pressure_coverage must be in [0, 1]")

    @classmethod
    def from_dir(cls, directory, **kwargs) -> "CohortSource":
        d = Path(directory)
        return cls(d / "vitals.csv", d / "statics.csv", d / "events.csv", **kwargs)


@dataclass(frozen=True)
class InclusionCriteria:
    min_duration: float = 5400.0
    min_age: float = 18.0
    require_invasive_ap: bool = True
    require_tci_remi: bool = True
    exclude_boluses: bool = True
    confounder_drugs: tuple = DEFAULT_CONFOUNDER_DRUGS

    def __post_init__(self):
        if not self.min_duration > 0:
            raise ValueError("min_duration must be positive")


def resample_series(
    series: VitalSeries,
    grid_step: float,
    start: Optional[float] = None,
    end: Optional[float] = None,
) -> VitalSeries:
    """Put ``series`` on the grid ``k * grid_step``.

    Each grid value is the mean of samples in ``[t, t + grid_step)``, except
    for the step-valued remifentanil target which takes the last observation
    at or before ``t``. Empty bins carry the previous value forward; bins
    before the first sample take the first value. ``start``/``end`` widen the
    grid beyond the sampled span.
    """
    if len(series) == 0:
        raise ValueError(f"cannot resample empty {series.kind.value} series")
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    ts, vs = series.timestamps, series.values
    lo = ts[0] if start is None else min(start, ts[0])
    hi = ts[-1] if end is None else max(end, ts[-1])
    k0 = math.floor(lo / grid_step + 1e-9)
    k1 = math.floor(hi / grid_step + 1e-9)
    if start is not None:
        k0 = math.floor(start / grid_step + 1e-9)
    if end is not None:
        k1 = math.floor(end / grid_step + 1e-9)
    grid = np.arange(k0, k1 + 1) * grid_step

    if series.kind is SignalKind.REMI_TARGET:
        idx = np.searchsorted(ts, grid + 1e-9, side="right") - 1
        values = vs[np.maximum(idx, 0)]
        return VitalSeries(series.kind, grid, values)

    bins = np.floor(ts / grid_step + 1e-9).astype(np.int64) - k0
    inside = (bins >= 0) & (bins < len(grid))
    sums = np.bincount(bins[inside], weights=vs[inside], minlength=len(grid))
    counts = np.bincount(bins[inside], minlength=len(grid))
    values = np.full(len(grid), np.nan)
    filled = counts > 0
    values[filled] = sums[filled] / counts[filled]
    if not filled.any():
        # all samples outside the requested grid: nearest-in-time fallback
        idx = np.clip(np.searchsorted(ts, grid, side="right") - 1, 0, len(ts) - 1)
        return VitalSeries(series.kind, grid, vs[idx])
    # carry forward, with a leading gap taking the first available value
    pos = np.where(filled, np.arange(len(grid)), -1)
    np.maximum.accumulate(pos, out=pos)
    first = int(np.argmax(filled))
    pos[pos < 0] = first
    return VitalSeries(series.kind, grid, values[pos])


def _bin_coverage(series: VitalSeries, grid_step: float, duration: float) -> float:
    n_bins = int(math.floor(duration / grid_step + 1e-9)) + 1
    bins = np.floor(series.timestamps / grid_step + 1e-9).astype(np.int64)
    bins = np.unique(bins[(bins >= 0) & (bins < n_bins)])
    return len(bins) / n_bins


def truncate_at_ecc(record: PatientRecord) -> PatientRecord:
    """Cut the case at the first extracorporeal-circulation start, if any."""
    ecc = record.first_event(EventKind.ECC_START)
    if ecc is None:
        return record
    cut = ecc.time
    series = {}
    for kind, s in record.series.items():
        keep = s.timestamps <= cut
        series[kind] = VitalSeries(kind, s.timestamps[keep], s.values[keep])
    events = tuple(e for e in record.events if e.time < cut)
    return PatientRecord(record.statics, series, events, cut)


def apply_inclusion(records: Iterable[PatientRecord], criteria: InclusionCriteria):
    """Split ``records`` into kept records and a drop log.

    The drop log is a list of ``(patient_id, criterion)`` pairs naming the
    first failed criterion.
    """
    kept, dropped = [], []
    for record in records:
        reason = _first_failed(record, criteria)
        if reason is None:
            kept.append(record)
        else:
            dropped.append((record.id, reason))
            logger.info("dropped patient %s: %s", record.id, reason)
    return kept, dropped


def _first_failed(record: PatientRecord, criteria: InclusionCriteria) -> Optional[str]:
    st = record.statics
    if record.duration < criteria.min_duration:
        return "min_duration"
    if not st.age > criteria.min_age:
        return "min_age"
    if criteria.require_invasive_ap and not st.invasive_ap:
        return "invasive_ap"
    if criteria.require_tci_remi and not st.tci_remi:
        return "tci_remi"
    if criteria.exclude_boluses and any(
        e.is_bolus_of(criteria.confounder_drugs) for e in record.events
    ):
        return "confounder_bolus"
    return None


# --------------------------------------------------------------------- CSV I/O


def _read_csv(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise CohortFormatError(f"{path}: {exc}") from exc
    if tuple(df.columns) != tuple(columns):
        raise CohortFormatError(
            f"{path}, line 1: expected header {','.join(columns)}, got {','.join(df.columns)}"
        )
    return df


def _numeric(df: pd.DataFrame, path: Path, column: str, integer=False) -> np.ndarray:
    raw = df[column].to_numpy(dtype=str)
    try:
        # numpy parses via the correctly rounded C routine; pandas does not
        values = raw.astype(float)
    except ValueError:
        values = pd.to_numeric(df[column], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if integer:
        bad |= np.isfinite(values) & (values != np.round(values))
    if bad.any():
        row = int(np.argmax(bad))
        raise CohortFormatError(
            f"{path}, line {row + 2}, column {column}: "
            f"invalid {'integer' if integer else 'number'} {df[column].iloc[row]!r}"
        )
    return values


def _flags(df: pd.DataFrame, path: Path, column: str) -> np.ndarray:
    values = df[column].str.strip()
    bad = ~values.isin(["0", "1"])
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        raise CohortFormatError(
            f"{path}, line {row + 2}, column {column}: flag must be 0 or 1, "
            f"got {values.iloc[row]!r}"
        )
    return (values == "1").to_numpy()


def _enum_column(df, path, column, allowed, what):
    values = df[column].str.strip()
    bad = ~values.isin(list(allowed))
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        raise CohortFormatError(
            f"{path}, line {row + 2}, column {column}: unknown {what} {values.iloc[row]!r}"
        )
    return values.to_numpy()


def load_cohort(source: CohortSource, jobs: int = 1) -> list:
    """Read the three cohort CSVs into gridded, validated records.

    Records are sorted by patient id. Patients whose record fails
    :func:`validate_record` or whose pressure series covers too little of the
    case are dropped and logged; the drop reasons are available through
    :func:`load_cohort_with_log`.
    """
    return load_cohort_with_log(source, jobs=jobs)[0]


def load_cohort_with_log(source: CohortSource, jobs: int = 1):
    statics_df = _read_csv(source.statics_path, STATICS_COLUMNS)
    vitals_df = _read_csv(source.vitals_path, VITALS_COLUMNS)
    events_df = _read_csv(source.events_path, EVENTS_COLUMNS)

    sp = source.statics_path
    ages = _numeric(statics_df, sp, "age", integer=True)
    bmis = _numeric(statics_df, sp, "bmi")
    asas = _numeric(statics_df, sp, "asa", integer=True)
    durations = _numeric(statics_df, sp, "duration_s")
    sexes = _enum_column(statics_df, sp, "sex", [s.value for s in Sex], "sex")
    invasive = _flags(statics_df, sp, "invasive_ap")
    tci = _flags(statics_df, sp, "tci_remi")
    ids = statics_df["patient_id"].str.strip().to_numpy()
    if len(set(ids)) != len(ids):
        raise CohortFormatError(f"{sp}: duplicate patient_id")

    vp = source.vitals_path
    v_ids = vitals_df["patient_id"].str.strip().to_numpy()
    v_times = _numeric(vitals_df, vp, "time_s")
    v_values = _numeric(vitals_df, vp, "value")
    v_signals = _enum_column(vitals_df, vp, "signal", [k.value for k in SignalKind], "signal")

    ep = source.events_path
    e_ids = events_df["patient_id"].str.strip().to_numpy()
    e_times = _numeric(events_df, ep, "time_s")
    e_kinds = _enum_column(events_df, ep, "event", [k.value for k in EventKind], "event")
    e_drugs = events_df["drug"].str.strip().to_numpy()

    vitals_by_patient = _group_rows(v_ids)
    events_by_patient = _group_rows(e_ids)

    def build(i):
        pid = ids[i]
        statics = PatientStatics(
            pid, int(ages[i]), float(bmis[i]), int(asas[i]), Sex(sexes[i]),
            bool(invasive[i]), bool(tci[i]),
        )
        rows = vitals_by_patient.get(pid, np.array([], dtype=np.int64))
        raw = {}
        for kind in SignalKind:
            sel = rows[v_signals[rows] == kind.value]
            if len(sel) == 0:
                continue
            order = np.argsort(v_times[sel], kind="stable")
            raw[kind] = (v_times[sel][order], v_values[sel][order])
        events = tuple(
            CaseEvent(EventKind(e_kinds[j]), e_times[j], e_drugs[j])
            for j in events_by_patient.get(pid, ())
        )
        return _assemble(statics, raw, events, float(durations[i]), source)

    if jobs != 1 and len(ids) > 1:
        from joblib import Parallel, delayed

        built = Parallel(n_jobs=jobs)(delayed(build)(i) for i in range(len(ids)))
    else:
        built = [build(i) for i in range(len(ids))]

    records, drops = [], []
    for pid, (record, reason) in sorted(zip(ids, built), key=lambda x: x[0]):
        if reason is None:
            records.append(record)
        else:
            drops.append((pid, reason))
            logger.warning("dropped patient %s at load: %s", pid, reason)
    return records, drops


def _group_rows(ids: np.ndarray) -> dict:
    groups = {}
    if len(ids) == 0:
        return groups
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    cuts = np.flatnonzero(sorted_ids[1:] != sorted_ids[:-1]) + 1
    for chunk in np.split(order, cuts):
        groups[ids[chunk[0]]] = chunk
    return groups


def _assemble(statics, raw, events, duration, source):
    missing = [k.value for k in SignalKind if k not in raw]
    if missing:
        return None, "missing signal " + ",".join(missing)
    for kind, (ts, _) in raw.items():
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            return None, f"{kind.value}: non-increasing timestamps"
    for kind in _PRESSURES:
        series = VitalSeries(kind, *raw[kind])
        coverage = _bin_coverage(series, source.grid_step, duration)
        if coverage < source.min_pressure_coverage:
            return None, f"{kind.value} covers {coverage:.0%} of case"
    series = {
        kind: resample_series(VitalSeries(kind, ts, vs), source.grid_step, 0.0, duration)
        for kind, (ts, vs) in raw.items()
    }
    record = PatientRecord(statics, series, events, duration)
    problems = validate_record(record)
    if problems:
        return None, "; ".join(problems)
    return record, None


def write_cohort(records: Sequence[PatientRecord], directory) -> CohortSource:
    """Write ``records`` as the three cohort CSVs; floats round-trip exactly."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=lambda r: r.id)
    with open(d / "statics.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(STATICS_COLUMNS) + "\n")
        for r in records:
            s = r.statics
            fh.write(
                f"{s.id},{s.age},{s.bmi!r},{s.asa},{s.sex.value},{r.duration!r},"
                f"{int(s.invasive_ap)},{int(s.tci_remi)}\n"
            )
    with open(d / "vitals.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(VITALS_COLUMNS) + "\n")
        for r in records:
            for kind in SignalKind:
                s = r.series[kind]
                lines = [
                    f"{r.id},{float(t)!r},{kind.value},{float(v)!r}\n"
                    for t, v in zip(s.timestamps, s.values)
                ]
                fh.writelines(lines)
    with open(d / "events.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(EVENTS_COLUMNS) + "\n")
        for r in records:
            for e in r.events:
                fh.write(f"{r.id},{e.time!r},{e.kind.value},{e.drug}\n")
    return CohortSource.from_dir(d)


def replace_statics(record: PatientRecord, **changes) -> PatientRecord:
    return replace(record, statics=replace(record.statics, **changes))
