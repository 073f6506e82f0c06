import json
import os
import subprocess
import sys

import pytest

import cases
from phcm import cli
from phcm.simulator import LEDGER_COLUMNS


def write_config(tmp_path, **over):
    cfg = {"name": "cli-tg", "representation": "spatial",
           "grid": {"cells": [8, 8], "lengths": [1.0, 1.0], "periodic": [True, True]},
           "initial": {"type": "taylor-green", "amplitude": 0.1},
           "model": {"kind": "newtonian", "theta": 0.02}, "dt": 0.01, "steps": 5, "output_cadence": 5}
    cfg.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_list_scenarios(capsys):
    assert cli.main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert "bar1d-hencky" in out and "ns2d-periodic-taylor-green-like" in out


def test_run_writes_ledger(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("PHCM_OUTPUT_DIR", raising=False)
    out_dir = tmp_path / "out"
    assert cli.main(["run", write_config(tmp_path), "-o", str(out_dir)]) == 0
    text = capsys.readouterr().out
    assert "5 steps" in text and "max |res_energy|" in text
    lines = (out_dir / "ledger.csv").read_text().splitlines()
    assert lines[0].split(",") == list(LEDGER_COLUMNS) and len(lines) == 6


def test_run_then_plot(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("PHCM_OUTPUT_DIR", raising=False)
    cli.main(["run", write_config(tmp_path), "-o", str(tmp_path), "-q", "--no-snapshots"])
    assert capsys.readouterr().out == ""
    assert cli.main(["plot", str(tmp_path / "ledger.csv"), "--columns", "E_total", "mass_total",
                     "-o", str(tmp_path / "img")]) == 0
    paths = capsys.readouterr().out.split()
    assert sorted(os.path.basename(p) for p in paths) == ["E_total.png", "mass_total.png"]


def test_audit_json(tmp_path, capsys):
    assert cli.main(["audit", write_config(tmp_path), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"scenario", "initial", "step"}
    assert rep["initial"]["by_class"]["algebraic"] <= 1e-12


def test_audit_text(tmp_path, capsys):
    assert cli.main(["audit", write_config(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "stokes" in out and "aggregate" in out


def test_oracle(tmp_path, capsys):
    p = tmp_path / "o.json"
    p.write_text(json.dumps(cases.oracle_config("convective", 16)))
    assert cli.main(["oracle", str(p)]) == 0
    out = capsys.readouterr().out
    assert "ghat" in out and "max |block - oracle|" in out


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"name": "x", "representation": "spatial", "grid": {"cells": [8]},
                             "initial": {"type": "rest"}, "model": {"kind": "newtonian"}, "steps": 1}))
    assert cli.main(["run", str(p)]) == 2
    assert "dt" in capsys.readouterr().err


def test_unknown_column_rejected(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["plot", str(tmp_path / "ledger.csv"), "--columns", "bogus"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "phcm", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
