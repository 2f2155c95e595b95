"""Command-line entry point: ``remitrend {simulate,run,sweep,report}``.

Settings come from one INI file with the sections ``[run]``,
``[simulation]`` or ``[cohort]``, ``[policy]``, ``[inclusion]``,
``[framing]``, ``[selection]`` and ``[metrics]``. Durations accept a
``s``/``min``/``h`` suffix and default to seconds. ``--set
section.key=value`` overrides any entry.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data_model import DEFAULT_CONFOUNDER_DRUGS
from .explain import export_best_fold, feature_report
from .framing import DEFAULT_ANALGESIC_DRUGS, Direction, FramingConfig
from .ingestion import (
    CohortSource,
    InclusionCriteria,
    apply_inclusion,
    load_cohort_with_log,
    truncate_at_ecc,
    write_cohort,
)
from .model_selection import EvaluationReport, SelectionConfig, build_dataset, run_experiment
from .simulator import PlantedPolicy, SimConfig, generate_cohort

__all__ = [
    "ConfigError",
    "RunConfig",
    "StageError",
    "load_config",
    "cmd_simulate",
    "cmd_run",
    "cmd_sweep",
    "cmd_report",
    "main",
]

log = logging.getLogger("remitrend")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

OUTPUT_ENV = "REMITREND_OUTPUT_DIR"
_STREAM_SIMULATION = 3


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """Failure of one pipeline stage, carrying the exit code."""

    def __init__(self, stage: str, code: int, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.code = code


_NUMERICAL = (np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


@contextlib.contextmanager
def _stage(name: str, code: int = EXIT_DATA):
    try:
        yield
    except StageError:
        raise
    except _NUMERICAL as exc:
        raise StageError(name, EXIT_NUMERICAL, str(exc)) from exc
    except (OSError, ValueError, KeyError) as exc:
        raise StageError(name, code, str(exc)) from exc


# ----------------------------------------------------------------- config

_UNITS = {"": 1.0, "s": 1.0, "sec": 1.0, "min": 60.0, "m": 60.0, "h": 3600.0}


def parse_duration(text: str) -> float:
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*([a-z]*)\s*", str(text))
    if not m or m.group(2) not in _UNITS:
        raise ConfigError(f"bad duration {text!r}")
    try:
        return float(m.group(1)) * _UNITS[m.group(2)]
    except ValueError:
        raise ConfigError(f"bad duration {text!r}") from None


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def _parse_list(text: str) -> tuple:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in _parse_list(text))
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


# key -> (parser, required)
_SCHEMA = {
    "run": {
        "seed": (int, False), "jobs": (int, False), "output_dir": (str, False),
    },
    "simulation": {
        "n_patients": (int, True), "case_duration": (parse_duration, False),
        "stimulus_rate": (float, False), "grid_step": (parse_duration, False),
        "sap_mean": (float, False), "sap_between_sd": (float, False),
        "reversion_time": (parse_duration, False), "surge_amplitude": (_parse_floats, False),
        "surge_rise": (parse_duration, False), "surge_decay": (parse_duration, False),
        "surge_attenuation": (float, False), "target_sap_effect": (float, False),
        "initial_targets": (_parse_floats, False), "incision_time": (parse_duration, False),
        "noise_sap": (float, False), "noise_map": (float, False), "noise_dap": (float, False),
        "noise_hr": (float, False), "noise_bis": (float, False),
    },
    "policy": {
        "up_window": (parse_duration, False), "up_sap_threshold": (float, False),
        "up_slope_threshold": (float, False), "down_window": (parse_duration, False),
        "down_sap_threshold": (float, False), "down_slope_band": (float, False),
        "target_min": (float, False), "target_max": (float, False), "step": (float, False),
        "reaction_delay": (parse_duration, False), "refractory": (parse_duration, False),
    },
    "cohort": {
        "dir": (str, False), "vitals": (str, False), "statics": (str, False),
        "events": (str, False), "grid_step": (parse_duration, False),
        "min_pressure_coverage": (float, False),
    },
    "inclusion": {
        "min_duration": (parse_duration, False), "min_age": (float, False),
        "require_invasive_ap": (_parse_bool, False), "require_tci_remi": (_parse_bool, False),
        "exclude_boluses": (_parse_bool, False), "confounder_drugs": (_parse_list, False),
    },
    "framing": {
        "obs_len": (parse_duration, True), "pred_len": (parse_duration, True),
        "stride": (parse_duration, False), "direction": (str, False),
        "incision_guard": (parse_duration, False), "min_change": (float, False),
        "analgesic_drugs": (_parse_list, False),
    },
    "selection": {
        "rfe_tolerance": (float, False), "poly_tolerance": (float, False),
        "inner_folds": (int, False), "outer_folds": (int, False), "max_degree": (int, False),
        "zscore_threshold": (float, False), "prune_unselected": (_parse_bool, False),
        "max_lambdas": (int, False),
    },
    "metrics": {"scatter_percentile": (float, False)},
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one invocation."""

    seed: int
    jobs: int
    output_dir: Path
    framing: Optional[FramingConfig]
    selection: SelectionConfig
    inclusion: InclusionCriteria
    simulation: Optional[SimConfig] = None
    cohort: Optional[CohortSource] = None
    scatter_percentile: float = 95.0
    raw: tuple = ()          # ((section, key, value), ...) as given

    def to_dict(self) -> dict:
        d = {
            "version": __version__,
            "seed": self.seed,
            "jobs": self.jobs,
            "output_dir": str(self.output_dir),
            "inclusion": _plain(self.inclusion),
            "selection": self.selection.to_dict(),
            "scatter_percentile": self.scatter_percentile,
            "given": {f"{s}.{k}": v for s, k, v in self.raw},
        }
        if self.framing is not None:
            d["framing"] = _plain(self.framing)
        if self.simulation is not None:
            d["simulation"] = self.simulation.to_dict()
        if self.cohort is not None:
            d["cohort"] = _plain(self.cohort)
        return d


def _plain(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, Direction):
            v = v.value
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _read_ini(path, overrides) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            cp.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
    for item in overrides or ():
        m = re.fullmatch(r"\s*([a-z_]+)\.([a-z_]+)\s*=(.*)", item)
        if not m:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        section, key, value = m.group(1), m.group(2), m.group(3).strip()
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    return cp


def _section(cp, name) -> dict:
    if not cp.has_section(name):
        return {}
    schema = _SCHEMA[name]
    out = {}
    for key, value in cp.items(name):
        if key not in schema:
            raise ConfigError(f"unknown key [{name}] {key}")
        try:
            out[key] = schema[key][0](value)
        except ConfigError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
        except ValueError:
            raise ConfigError(f"[{name}] {key}: bad value {value!r}") from None
    return out


def _missing(cp, name) -> list:
    have = set(cp.options(name)) if cp.has_section(name) else set()
    return [f"{name}.{k}" for k, (_, req) in _SCHEMA[name].items() if req and k not in have]


def _build(factory, what, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def load_config(path=None, overrides=(), need_framing=True, output_dir=None) -> RunConfig:
    """Parse, validate and resolve a configuration file plus overrides."""
    cp = _read_ini(path, overrides)
    unknown = [s for s in cp.sections() if s not in _SCHEMA]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    has_sim, has_cohort = cp.has_section("simulation"), cp.has_section("cohort")
    if has_sim == has_cohort:
        raise ConfigError("exactly one of [simulation] and [cohort] must be present")
    missing = _missing(cp, "simulation") if has_sim else []
    if need_framing:
        missing += _missing(cp, "framing")
    if missing:
        raise ConfigError("missing required field(s): " + ", ".join(missing))

    run = _section(cp, "run")
    seed = run.get("seed", 0)
    jobs = run.get("jobs", 1)
    if jobs == 0 or jobs < -1:
        raise ConfigError("[run] jobs must be positive or -1")
    out = output_dir or run.get("output_dir") or os.environ.get(OUTPUT_ENV) or "remitrend_out"

    simulation = cohort = None
    if has_sim:
        sim = _section(cp, "simulation")
        noise = {k[6:].upper(): sim.pop(k) for k in list(sim) if k.startswith("noise_")}
        policy = _build(PlantedPolicy, "[policy]", **_section(cp, "policy"))
        sim_seed = int(np.random.SeedSequence([seed, _STREAM_SIMULATION]).generate_state(1)[0])
        if noise:
            sim["noise_sd"] = noise
        simulation = _build(SimConfig, "[simulation]", seed=sim_seed, policy=policy, **sim)
    else:
        if cp.has_section("policy"):
            raise ConfigError("[policy] only applies to [simulation]")
        co = _section(cp, "cohort")
        base = Path(co.pop("dir", "."))
        paths = {k: base / co.pop(k, f"{k}.csv") for k in ("vitals", "statics", "events")}
        cohort = _build(
            CohortSource, "[cohort]", vitals_path=paths["vitals"],
            statics_path=paths["statics"], events_path=paths["events"], **co,
        )

    inc = _section(cp, "inclusion")
    inc.setdefault("confounder_drugs", DEFAULT_CONFOUNDER_DRUGS)
    inclusion = _build(InclusionCriteria, "[inclusion]", **inc)

    framing = None
    if need_framing:
        fr = _section(cp, "framing")
        fr.setdefault("analgesic_drugs", DEFAULT_ANALGESIC_DRUGS)
        if "direction" in fr:
            try:
                fr["direction"] = Direction(fr["direction"].lower())
            except ValueError:
                raise ConfigError(f"[framing] direction: {fr['direction']!r}") from None
        framing = _build(FramingConfig, "[framing]", **fr)

    selection = _build(SelectionConfig, "[selection]", seed=seed, **_section(cp, "selection"))
    percentile = _section(cp, "metrics").get("scatter_percentile", 95.0)
    if not 0 < percentile <= 100:
        raise ConfigError("[metrics] scatter_percentile must be in (0, 100]")
    raw = tuple((s, k, v) for s in cp.sections() for k, v in cp.items(s))
    return RunConfig(seed, jobs, Path(out), framing, selection, inclusion, simulation, cohort,
                     percentile, raw)


def _with_override(cfg: RunConfig, section: str, key: str, value: str) -> RunConfig:
    """``cfg`` re-resolved with one entry replaced (used by sweeps)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for s, k, v in cfg.raw:
        if not cp.has_section(s):
            cp.add_section(s)
        cp.set(s, k, v)
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, key, value)
    items = [f"{s}.{k}={v}" for s in cp.sections() for k, v in cp.items(s)]
    return load_config(None, items, output_dir=str(cfg.output_dir))


# --------------------------------------------------------------- commands


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _prepare_dir(path: Path) -> Path:
    with _stage("output"):
        path.mkdir(parents=True, exist_ok=True)
        if not os.access(path, os.W_OK):
            raise OSError(f"output directory {path} is not writable")
    return path


def cmd_simulate(cfg: RunConfig, directory: Optional[Path] = None) -> Path:
    """Write a simulated cohort (three CSVs) and its manifest."""
    if cfg.simulation is None:
        raise ConfigError("simulate needs a [simulation] section")
    out = _prepare_dir(Path(directory or cfg.output_dir))
    with _stage("simulate"):
        records = generate_cohort(cfg.simulation, jobs=cfg.jobs)
        write_cohort(records, out)
        _write_json(out / "manifest.json", {
            "command": "simulate",
            "config": cfg.to_dict(),
            "n_patients": len(records),
            "files": ["vitals.csv", "statics.csv", "events.csv"],
        })
    return out


def _load_records(cfg: RunConfig, out: Path):
    source = cfg.cohort
    if cfg.simulation is not None:
        cmd_simulate(cfg, out / "cohort")
        source = CohortSource.from_dir(out / "cohort", grid_step=cfg.simulation.grid_step)
    with _stage("ingest"):
        records, load_drops = load_cohort_with_log(source, jobs=cfg.jobs)
        records = [truncate_at_ecc(r) for r in records]
        records, drops = apply_inclusion(records, cfg.inclusion)
    with _stage("output"):
        with open(out / "dropped_patients.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "stage", "reason"])
            for pid, reason in load_drops:
                w.writerow([pid, "load", reason])
            for pid, reason in drops:
                w.writerow([pid, "inclusion", reason])
    if not records:
        raise StageError("ingest", EXIT_DATA, "no patient passed loading and inclusion")
    return records


def _execute(cfg: RunConfig, records, out: Path, dataset=None) -> EvaluationReport:
    with _stage("frame"):
        if dataset is None:
            dataset = build_dataset(records, cfg.framing)
        if len(dataset[0]) == 0:
            raise ValueError("no segments survived framing")
    with _stage("train", EXIT_NUMERICAL):
        report = run_experiment(records, cfg.framing, cfg.selection, jobs=cfg.jobs,
                                dataset=dataset)
        if not report.ok_folds:
            raise ArithmeticError("every outer fold was skipped")
    with _stage("output"):
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        report.write_fold_csv(out / "folds.csv")
        with open(out / "exclusions.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rule", "count"])
            for rule, n in report.exclusions.items():
                w.writerow([rule, n])
        models = out / "models"
        models.mkdir(exist_ok=True)
        for f in report.ok_folds:
            (models / f"fold_{f.fold}.json").write_text(f.model.dumps() + "\n", encoding="utf-8")
            (models / f"fold_{f.fold}.txt").write_text(feature_report(f.model), encoding="utf-8")
    with _stage("explain"):
        scatter = export_best_fold(report, cfg.scatter_percentile)
        scatter.write_csv(out / "scatter.csv")
        scatter.write_metadata(out / "scatter_meta.json")
    return report


def cmd_run(cfg: RunConfig, directory: Optional[Path] = None) -> EvaluationReport:
    """Ingest, frame, featurise, train, evaluate and explain."""
    if cfg.framing is None:
        raise ConfigError("run needs a [framing] section")
    out = _prepare_dir(Path(directory or cfg.output_dir))
    _write_json(out / "manifest.json", {"command": "run", "config": cfg.to_dict()})
    records = _load_records(cfg, out)
    return _execute(cfg, records, out)


SWEEP_COLUMNS = ("value", "mean_auroc", "min_auroc", "max_auroc", "std_auroc", "status", "error")
SWEEP_AXES = ("obs_len", "pred_len")


def cmd_sweep(cfg: RunConfig, axis: str, values) -> list:
    """One full run per value of ``[framing] axis``; writes ``sweep_<axis>.csv``.

    A failing value is recorded with ``status=failed`` and does not stop
    the sweep. The cohort is ingested once.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
    values = list(values)
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    out = _prepare_dir(cfg.output_dir)
    _write_json(out / "manifest.json", {
        "command": "sweep", "axis": axis, "values": [str(v) for v in values],
        "config": cfg.to_dict(),
    })
    records = _load_records(cfg, out)
    rows = []
    for value in values:
        seconds = parse_duration(value)
        label = f"{seconds:g}"
        run_dir = out / f"{axis}_{label}"
        try:
            sub = _with_override(cfg, "framing", axis, label)
            run_dir.mkdir(exist_ok=True)
            _write_json(run_dir / "manifest.json", {"command": "run", "config": sub.to_dict()})
            report = _execute(sub, records, run_dir)
            v = report.values("auroc")
            rows.append([label, *report.aggregate("auroc"), float(v.std()), "ok", ""])
        except (StageError, ConfigError) as exc:
            log.error("sweep %s=%s failed: %s", axis, label, exc)
            rows.append([label, "", "", "", "", "failed", str(exc)])
    with _stage("output"):
        with open(out / f"sweep_{axis}.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return rows


def cmd_report(path) -> str:
    """Text rendering of a saved ``report.json`` (or a run directory)."""
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    with _stage("report"):
        with open(p, encoding="utf-8") as fh:
            d = json.load(fh)
        return EvaluationReport.from_dict(d).to_text()


# ------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="remitrend", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("-o", "--output-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)

    common(sub.add_parser("simulate", help="write a simulated cohort"))
    common(sub.add_parser("run", help="run the full pipeline"))
    sp = sub.add_parser("sweep", help="repeat run over window lengths")
    common(sp)
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", required=True, help="comma-separated, e.g. 1min,2min,3min")
    rp = sub.add_parser("report", help="print a saved report")
    rp.add_argument("path", help="report.json or a run directory")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            sys.stdout.write(cmd_report(args.path))
            return EXIT_OK
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.jobs is not None:
            overrides.append(f"run.jobs={args.jobs}")
        cfg = load_config(args.config, overrides, need_framing=args.command != "simulate",
                          output_dir=args.output_dir)
        if args.command == "simulate":
            out = cmd_simulate(cfg)
            print(f"cohort written to {out}")
        elif args.command == "run":
            report = cmd_run(cfg)
            sys.stdout.write(report.to_text())
        else:
            rows = cmd_sweep(cfg, args.axis, _parse_list(args.values))
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS[:6])
            for r in rows:
                w.writerow([f"{v:.4f}" if isinstance(v, float) else v for v in r[:6]])
            if all(r[5] == "failed" for r in rows):
                return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
