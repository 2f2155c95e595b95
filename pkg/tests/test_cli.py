import json

import pytest

from remitrend.cli import (
    ConfigError,
    StageError,
    cmd_report,
    cmd_run,
    cmd_simulate,
    cmd_sweep,
    load_config,
    main,
    parse_duration,
)
from remitrend.framing import Direction

TINY = """
[run]
seed = 5

[simulation]
n_patients = 9
case_duration = 2h

[framing]
obs_len = 2min
pred_len = 60   # seconds
direction = increase

[selection]
outer_folds = 3
max_degree = 1
"""


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(TINY)
    return path


@pytest.mark.parametrize("text, seconds", [("90", 90.0), ("2min", 120.0), ("1.5h", 5400.0),
                                           (" 30 s ", 30.0)])
def test_parse_duration(text, seconds):
    assert parse_duration(text) == seconds


@pytest.mark.parametrize("text", ["", "5 days", "min"])
def test_parse_duration_rejects(text):
    with pytest.raises(ConfigError):
        parse_duration(text)


def test_load_config_resolves(ini):
    cfg = load_config(ini)
    assert cfg.framing.obs_len == 120.0 and cfg.framing.pred_len == 60.0
    assert cfg.framing.direction is Direction.INCREASE
    assert cfg.simulation.n_patients == 9 and cfg.simulation.case_duration == 7200.0
    assert cfg.selection.seed == 5 and cfg.selection.outer_folds == 3
    assert str(cfg.output_dir) == "remitrend_out"


def test_overrides_and_env(ini, monkeypatch):
    monkeypatch.setenv("REMITREND_OUTPUT_DIR", "/tmp/elsewhere")
    cfg = load_config(ini, ["framing.direction=decrease", "selection.rfe_tolerance=0.05"])
    assert cfg.framing.direction is Direction.DECREASE
    assert cfg.selection.rfe_tolerance == 0.05
    assert str(cfg.output_dir) == "/tmp/elsewhere"
    assert str(load_config(ini, output_dir="x").output_dir) == "x"


@pytest.mark.parametrize("edit, needle", [
    (lambda t: t.replace("n_patients = 9", ""), "simulation.n_patients"),
    (lambda t: t.replace("obs_len = 2min", "").replace("pred_len = 60   # seconds", ""),
     "framing.obs_len, framing.pred_len"),
    (lambda t: t + "\n[cohort]\ndir = x\n", "exactly one"),
    (lambda t: t + "\n[extra]\na = 1\n", "unknown section"),
    (lambda t: t.replace("max_degree = 1", "max_degre = 1"), "unknown key"),
    (lambda t: t.replace("direction = increase", "direction = sideways"), "direction"),
    (lambda t: t.replace("obs_len = 2min", "obs_len = soon"), "obs_len"),
])
def test_config_errors(tmp_path, edit, needle):
    path = tmp_path / "bad.ini"
    path.write_text(edit(TINY))
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert needle in str(info.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
    assert main(["run", str(tmp_path / "nope.ini")]) == 1


def test_simulate_writes_cohort(ini, tmp_path):
    out = cmd_simulate(load_config(ini, need_framing=False), tmp_path / "sim")
    assert {p.name for p in out.iterdir()} == {"vitals.csv", "statics.csv", "events.csv",
                                               "manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_patients"] == 9


def test_run_outputs_and_report(ini, tmp_path):
    cfg = load_config(ini, output_dir=str(tmp_path / "run"))
    report = cmd_run(cfg)
    out = tmp_path / "run"
    for name in ("report.txt", "report.json", "folds.csv", "exclusions.csv", "scatter.csv",
                 "scatter_meta.json", "dropped_patients.csv", "manifest.json"):
        assert (out / name).is_file(), name
    assert len(list((out / "models").glob("fold_*.json"))) == len(report.ok_folds)
    assert cmd_report(out) == (out / "report.txt").read_text()
    assert main(["report", str(out / "report.json")]) == 0


def test_main_exit_codes(ini, tmp_path, capsys):
    assert main(["run", str(ini), "-o", str(tmp_path / "a"), "--seed", "2"]) == 0
    assert "[aggregate]" in capsys.readouterr().out
    code = main(["run", str(ini), "-o", str(tmp_path / "b"), "--set", "inclusion.min_age=200"])
    assert code == 2
    assert "ingest" in capsys.readouterr().err
    assert main(["run", str(ini), "--set", "selection=1"]) == 1


def test_stage_error_carries_stage(ini, tmp_path):
    cfg = load_config(ini, ["inclusion.min_age=200"], output_dir=str(tmp_path))
    with pytest.raises(StageError) as info:
        cmd_run(cfg)
    assert info.value.stage == "ingest" and info.value.code == 2


def test_sweep_records_failures(ini, tmp_path):
    cfg = load_config(ini, output_dir=str(tmp_path / "sw"))
    rows = cmd_sweep(cfg, "pred_len", ["1min", "3h"])
    assert [r[5] for r in rows] == ["ok", "failed"]
    lines = (tmp_path / "sw" / "sweep_pred_len.csv").read_text().splitlines()
    assert lines[0] == "value,mean_auroc,min_auroc,max_auroc,std_auroc,status,error"
    assert (tmp_path / "sw" / "pred_len_60" / "report.json").is_file()
    with pytest.raises(ConfigError):
        cmd_sweep(cfg, "stride", ["30", "60"])
