import json
import subprocess
import sys

import pytest

import appscreen.learn.cv as cv
from appscreen.cli import COMMANDS, main

SUBCOMMANDS = sorted(COMMANDS)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--seed", "5", "--n", "30", "--events-per-participant", "1500",
                 "--out", str(root / "data")]) == 0
    assert main(["featurize", "--data", str(root / "data"), "--out", str(root / "feat")]) == 0
    return root


def common(root):
    return ["--features", str(root / "feat" / "features.npz"), "--labels", str(root / "data" / "labels.csv")]


def test_synth_writes_cohort_files(workdir):
    names = {p.name for p in (workdir / "data").iterdir()}
    assert {"events.jsonl", "manifest.json", "catalog.csv", "labels.csv"} <= names


def test_featurize_outputs(workdir):
    summary = json.loads((workdir / "feat" / "featurize.json").read_text())
    assert summary["participants"] == 30 and summary["raw_columns"] == 864
    header = (workdir / "feat" / "matrix.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 865


def test_select_stable_writes_sweep(workdir):
    out = workdir / "sel.json"
    assert main(["select", *common(workdir), "--seed", "1", "--fs", "stable", "--n-boot", "50",
                 "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert len(payload["sweep"]) == 49


def test_evaluate_is_byte_deterministic(workdir):
    args = [*common(workdir), "--seed", "3", "--fs", "ig", "--k", "4", "--spec", "dummy", "logit",
            "--budget", "1", "--inner-folds", "5", "--threads", "1"]
    assert main(["evaluate", *args, "--out", str(workdir / "ev1")]) == 0
    assert main(["evaluate", *args, "--out", str(workdir / "ev2")]) == 0
    for name in ("eval_dummy.json", "eval_logit.json"):
        assert (workdir / "ev1" / name).read_bytes() == (workdir / "ev2" / name).read_bytes()
    report = json.loads((workdir / "ev1" / "eval_logit.json").read_text())
    assert len(report["rows"]) == 30 and report["audit"]["held_out_touches"] == 0


def test_stack_explain_and_report(workdir):
    base = [*common(workdir), "--seed", "4", "--fs", "ig", "--k", "3", "--budget", "1", "--inner-folds", "5",
            "--threads", "1"]
    assert main(["stack-evaluate", *base, "--spec", "logit", "gaussian_nb", "--top", "2",
                 "--out", str(workdir / "stack")]) == 0
    assert main(["evaluate", *base, "--spec", "cart", "--explain", "--out", str(workdir / "expl_ev")]) == 0
    assert main(["explain", "--report", str(workdir / "expl_ev" / "eval_cart.json"), "--plots",
                 "--out", str(workdir / "expl_rows")]) == 0
    assert (workdir / "expl_rows" / "summary.svg").exists()
    assert main(["explain", *common(workdir), "--seed", "4", "--fs", "ig", "--k", "3", "--spec", "cart",
                 "--out", str(workdir / "expl_all")]) == 0
    forces = list((workdir / "expl_all" / "force").glob("*.json"))
    assert len(forces) == 30
    assert main(["report", "--inputs", str(workdir / "ev1"), str(workdir / "stack"),
                 "--out", str(workdir / "rep")]) == 0
    rep = json.loads((workdir / "rep" / "report.json").read_text())
    assert {m["spec"] for m in rep["models"]} == {"dummy", "logit", "stack"}
    assert "Best model per feature-selection method" in (workdir / "rep" / "report.txt").read_text()


def test_config_file_and_precedence(workdir):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"fs": "ig", "k": 2, "seed": 1}))
    out = workdir / "sel_cfg.json"
    assert main(["select", *common(workdir), "--config", str(cfg), "--k", "3", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["selected"]) == 3
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["select", *common(workdir), "--config", str(cfg), "--seed", "1", "--out", str(out)]) == 1


# ---------------------------------------------------------------- exit codes

def test_configuration_errors_exit_1(workdir, capsys):
    assert main(["synth", "--n", "30", "--out", str(workdir / "x")]) == 1          # no seed
    assert main(["evaluate", *common(workdir), "--seed", "1", "--spec", "svm", "--out", str(workdir / "x")]) == 1
    assert main(["select", *common(workdir), "--seed", "1", "--fs", "lasso"]) == 1
    assert main(["select", "--unknown-flag"]) == 1
    assert main(["frobnicate"]) == 1
    assert "config error" in capsys.readouterr().err


def test_data_errors_exit_2(workdir, tmp_path):
    data = tmp_path / "bad"
    data.mkdir()
    for name in ("manifest.json", "catalog.csv", "labels.csv"):
        (data / name).write_bytes((workdir / "data" / name).read_bytes())
    (data / "events.jsonl").write_text('{"pid": "P001", "pkg": "a", "ev": "FG", "ts": "noon"}\n')
    assert main(["featurize", "--data", str(data), "--out", str(tmp_path / "o")]) == 2
    labels = tmp_path / "labels.csv"
    labels.write_text("participant_id,i1,i2,i3,i4,i5,i6,i7,i8,i9\nP001,9,0,0,0,0,0,0,0,0\n")
    assert main(["select", "--features", str(workdir / "feat" / "features.npz"), "--labels", str(labels),
                 "--seed", "1", "--out", str(tmp_path / "s.json")]) == 2


def test_leakage_exits_3(workdir, monkeypatch):
    real = cv.fit_scaler
    monkeypatch.setattr(cv, "fit_scaler", lambda matrix, ids: real(matrix, matrix.participant_ids))
    assert main(["evaluate", *common(workdir), "--seed", "1", "--fs", "none", "--spec", "dummy",
                 "--budget", "1", "--threads", "1", "--out", str(workdir / "leak")]) == 3


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_on_every_subcommand(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    assert "--config" in capsys.readouterr().out


def test_console_entry_point_runs():
    done = subprocess.run([sys.executable, "-m", "appscreen.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0
    for command in SUBCOMMANDS:
        assert command in done.stdout
