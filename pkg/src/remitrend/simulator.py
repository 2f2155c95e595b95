"""Synthetic anesthesia cohorts with a planted, SAP-driven dosing policy.

Vitals are generated directly on a uniform grid. The remifentanil target is
driven by :class:`PlantedPolicy`, which reads only the stored SAP samples, so
:func:`policy_oracle_labels` can replay every decision from a record alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data_model import (
    CaseEvent,
    EventKind,
    PatientRecord,
    PatientStatics,
    Sex,
    SignalKind,
    VitalSeries,
)

__all__ = [
    "PlantedPolicy",
    "SimConfig",
    "generate_cohort",
    "generate_patient",
    "policy_oracle_labels",
    "target_change_log",
]

_TOL = 1e-9


@dataclass(frozen=True)
class PlantedPolicy:
    """Clinician rule: raise on high/rising SAP, lower on low and flat SAP.

    Windows and delays are seconds, thresholds mmHg, slopes mmHg/min. After a
    change takes effect no decision is taken for ``refractory`` seconds.
    """

    up_window: float = 120.0
    up_sap_threshold: float = 140.0
    up_slope_threshold: float = 8.0
    down_window: float = 360.0
    down_sap_threshold: float = 118.0
    down_slope_band: float = 1.5
    target_min: float = 2.0
    target_max: float = 6.0
    step: float = 0.5
    reaction_delay: float = 30.0
    refractory: float = 60.0

    def __post_init__(self):
        if not self.target_min < self.target_max:
            raise ValueError("target_min must be below target_max")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.up_window <= 0 or self.down_window <= 0:
            raise ValueError("policy windows must be positive")
        if self.reaction_delay <= 0 or self.refractory < 0:
            raise ValueError("reaction_delay must be positive and refractory non-negative")


def _default_noise():
    return {"SAP": 4.0, "MAP": 2.0, "DAP": 2.0, "HR": 3.0, "BIS": 3.0}


@dataclass(frozen=True)
class SimConfig:
    n_patients: int
    seed: int = 0
    case_duration: float = 10800.0
    stimulus_rate: float = 4.0
    policy: PlantedPolicy = field(default_factory=PlantedPolicy)
    noise_sd: dict = field(default_factory=_default_noise)
    grid_step: float = 30.0
    sap_mean: float = 120.0
    sap_between_sd: float = 5.0
    reversion_time: float = 300.0
    surge_amplitude: tuple = (25.0, 45.0)
    surge_rise: float = 60.0
    surge_decay: float = 180.0
    surge_attenuation: float = 0.5
    target_sap_effect: float = 3.0
    initial_targets: tuple = (2.5, 3.0, 3.5, 4.0)
    incision_time: float = 600.0
    forced_surges: tuple = ()

    def __post_init__(self):
        if int(self.n_patients) != self.n_patients or self.n_patients <= 0:
            raise ValueError("n_patients must be a positive integer")
        if self.stimulus_rate < 0:
            raise ValueError("stimulus_rate must be non-negative")
        if not self.grid_step > 0 or not self.case_duration > 0:
            raise ValueError("grid_step and case_duration must be positive")
        noise = _default_noise()
        noise.update({SignalKind(k).value: float(v) for k, v in dict(self.noise_sd).items()})
        if any(v < 0 for v in noise.values()):
            raise ValueError("noise_sd must be non-negative")
        object.__setattr__(self, "noise_sd", noise)
        object.__setattr__(self, "forced_surges", tuple(tuple(s) for s in self.forced_surges))
        object.__setattr__(self, "surge_amplitude", tuple(self.surge_amplitude))
        object.__setattr__(self, "initial_targets", tuple(self.initial_targets))
        for name in ("reaction_delay", "refractory", "up_window", "down_window"):
            value = getattr(self.policy, name)
            if abs(value / self.grid_step - round(value / self.grid_step)) > 1e-9:
                raise ValueError(f"policy.{name} must be a multiple of grid_step")
        if self.policy.reaction_delay < self.grid_step:
            raise ValueError("policy.reaction_delay must be at least one grid step")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["surge_amplitude"] = list(self.surge_amplitude)
        d["initial_targets"] = list(self.initial_targets)
        d["forced_surges"] = [list(s) for s in self.forced_surges]
        return d


def _mean_slope(values: np.ndarray, step: float):
    """Mean and least-squares slope (units/min) of evenly spaced samples."""
    n = len(values)
    t = (np.arange(n) - (n - 1) / 2.0) * (step / 60.0)
    mean = float(np.mean(values))
    slope = float(np.dot(t, values - mean) / np.dot(t, t))
    return mean, slope


class _PolicyState:
    """Sequential replay of the planted policy on a gridded SAP trace."""

    def __init__(self, policy: PlantedPolicy, step: float, target: float):
        self.policy = policy
        self.step = step
        self.target = float(target)
        self.pending = None  # (index, new target)
        self.blocked_until = -1
        self.up_n = int(round(policy.up_window / step))
        self.down_n = int(round(policy.down_window / step))
        self.delay_n = int(round(policy.reaction_delay / step))
        self.refr_n = int(round(policy.refractory / step))

    def apply_pending(self, k: int) -> Optional[float]:
        if self.pending is not None and self.pending[0] == k:
            delta = self.pending[1] - self.target
            self.target = self.pending[1]
            self.pending = None
            self.blocked_until = k + self.refr_n
            return delta
        return None

    def decide(self, k: int, sap: np.ndarray) -> None:
        """Look at SAP up to and including index ``k``."""
        if self.pending is not None or k < self.blocked_until:
            return
        p = self.policy
        new = None
        if k >= self.up_n:
            mean, slope = _mean_slope(sap[k - self.up_n : k + 1], self.step)
            if mean > p.up_sap_threshold or slope > p.up_slope_threshold:
                candidate = min(self.target + p.step, p.target_max)
                if candidate - self.target > _TOL:
                    new = candidate
        if new is None and k >= self.down_n:
            mean, slope = _mean_slope(sap[k - self.down_n : k + 1], self.step)
            if mean < p.down_sap_threshold and abs(slope) < p.down_slope_band:
                candidate = max(self.target - p.step, p.target_min)
                if self.target - candidate > _TOL:
                    new = candidate
        if new is not None:
            self.pending = (k + self.delay_n, new)


def _ar1(rng, n, mean, sd, a):
    """Stationary AR(1) path with marginal standard deviation ``sd``."""
    innov = rng.standard_normal(n) * sd * np.sqrt(1.0 - a * a)
    x = np.empty(n)
    x[0] = rng.standard_normal() * sd
    for k in range(1, n):
        x[k] = a * x[k - 1] + innov[k]
    return mean + x


def _surge_profile(grid, onsets, amplitudes, rise, decay):
    total = np.zeros(len(grid))
    for t0, amp in zip(onsets, amplitudes):
        total += amp * np.interp(grid, [t0, t0 + rise, t0 + rise + decay], [0.0, 1.0, 0.0],
                                 left=0.0, right=0.0)
    return total


def generate_patient(config: SimConfig, index: int, seed_seq: np.random.SeedSequence):
    """Simulate one case; returns the record."""
    rng = np.random.default_rng(seed_seq)
    step = config.grid_step
    n = int(np.floor(config.case_duration / step + 1e-9)) + 1
    grid = np.arange(n) * step
    a = float(np.exp(-step / config.reversion_time))
    noise = config.noise_sd
    pol = config.policy

    statics = PatientStatics(
        id=f"sim{index:04d}",
        age=int(rng.integers(25, 81)),
        bmi=float(np.round(np.clip(rng.normal(25.0, 4.0), 16.0, 45.0), 1)),
        asa=int(rng.integers(1, 5)),
        sex=Sex.FEMALE if rng.random() < 0.4 else Sex.MALE,
    )

    sap_base = config.sap_mean + config.sap_between_sd * rng.standard_normal()
    sap_noise = _ar1(rng, n, 0.0, noise["SAP"], a)
    hr = _ar1(rng, n, 70.0 + 8.0 * rng.standard_normal(), noise["HR"], a)
    bis = _ar1(rng, n, 45.0 + 4.0 * rng.standard_normal(), noise["BIS"], a)
    map_noise = rng.standard_normal(n) * noise["MAP"]
    dap_noise = rng.standard_normal(n) * noise["DAP"]

    n_surges = rng.poisson(config.stimulus_rate * config.case_duration / 3600.0)
    onsets = np.sort(rng.uniform(0.0, config.case_duration, n_surges))
    lo, hi = config.surge_amplitude
    amps = rng.uniform(lo, hi, n_surges)
    if config.forced_surges:
        forced = np.asarray(config.forced_surges, dtype=float).reshape(-1, 2)
        onsets = np.concatenate([onsets, forced[:, 0]])
        amps = np.concatenate([amps, forced[:, 1]])
    surge = _surge_profile(grid, onsets, amps, config.surge_rise, config.surge_decay)

    target0 = float(rng.choice(config.initial_targets))
    state = _PolicyState(pol, step, target0)
    span = pol.target_max - pol.target_min
    target_ref = float(np.mean(config.initial_targets))
    sap = np.empty(n)
    target = np.empty(n)
    for k in range(n):
        state.apply_pending(k)
        frac = (state.target - pol.target_min) / span
        level = sap_base - config.target_sap_effect * (state.target - target_ref)
        sap[k] = level + sap_noise[k] + surge[k] * (1.0 - config.surge_attenuation * frac)
        state.decide(k, sap)
        target[k] = state.target

    dap = 0.55 * sap + 5.0 + dap_noise
    mean_ap = (sap + 2.0 * dap) / 3.0 + map_noise
    series = {
        SignalKind.SAP: VitalSeries(SignalKind.SAP, grid, sap),
        SignalKind.MAP: VitalSeries(SignalKind.MAP, grid, mean_ap),
        SignalKind.DAP: VitalSeries(SignalKind.DAP, grid, dap),
        SignalKind.HR: VitalSeries(SignalKind.HR, grid, hr),
        SignalKind.BIS: VitalSeries(SignalKind.BIS, grid, np.clip(bis, 0.0, 100.0)),
        SignalKind.REMI_TARGET: VitalSeries(SignalKind.REMI_TARGET, grid, target),
    }
    events = ()
    if config.incision_time <= config.case_duration:
        events = (CaseEvent(EventKind.INCISION, config.incision_time),)
    return PatientRecord(statics, series, events, float(grid[-1]))


def generate_cohort(config: SimConfig, jobs: int = 1) -> list:
    """Generate ``config.n_patients`` records; a pure function of ``config``.

    Each patient draws from its own child of ``SeedSequence(seed)``, so
    parallel generation reproduces the serial output.
    """
    children = np.random.SeedSequence(int(config.seed)).spawn(int(config.n_patients))
    if jobs != 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=jobs)(
            delayed(generate_patient)(config, i, s) for i, s in enumerate(children)
        )
    return [generate_patient(config, i, s) for i, s in enumerate(children)]


def target_change_log(record: PatientRecord) -> list:
    """``(time, signed step)`` for every change present in the target series."""
    remi = record[SignalKind.REMI_TARGET]
    diffs = np.diff(remi.values)
    idx = np.flatnonzero(np.abs(diffs) > _TOL) + 1
    return [(float(remi.timestamps[i]), float(diffs[i - 1])) for i in idx]


def policy_oracle_labels(record: PatientRecord, policy: PlantedPolicy) -> list:
    """Replay ``policy`` on the stored SAP trace of ``record``.

    Returns ``(time, signed step)`` for every time the policy changes the
    target, starting from the record's initial target.
    """
    sap_series = record[SignalKind.SAP]
    step = sap_series.grid_step()
    if step is None or record.grid_step() is None:
        raise ValueError(f"record {record.id} is not on a uniform grid")
    sap = np.asarray(sap_series.values)
    ts = sap_series.timestamps
    state = _PolicyState(policy, step, float(record[SignalKind.REMI_TARGET].values[0]))
    fired = []
    for k in range(len(sap)):
        delta = state.apply_pending(k)
        if delta is not None:
            fired.append((float(ts[k]), float(delta)))
        state.decide(k, sap)
    return fired
