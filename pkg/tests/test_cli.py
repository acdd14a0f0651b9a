import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from edspin.cli import main

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def small_trajectory_doc():
    return {
        "name": "tiny",
        "seed": 4,
        "lattice": {"points": [64], "extents": [20.0]},
        "state": {"type": "gaussian", "momentum": [0.5], "theta": 1.0},
        "fields": {"derivative": "spectral"},
        "evolver": {"dt": 0.05, "t_end": 0.5, "scheme": "split_step"},
        "ensemble": {"particles": 200, "bins": 10, "subquantum": {"eta": 1.0}},
        "outputs": ["ledger", "trajectories", "report", "snapshots", "snapshots_json"],
    }


def test_larmor_ledger_traces_a_circle(tmp_path):
    out = tmp_path / "run"
    assert main(["evolve", "--config", str(SCENARIOS / "larmor.json"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "ledger.csv")))
    t = np.array([float(r["t"]) for r in rows])
    sx = np.array([float(r["Sx"]) for r in rows])
    sy = np.array([float(r["Sy"]) for r in rows])
    assert np.allclose(np.hypot(sx, sy), 0.5, atol=1e-12)
    period = 2 * np.pi / 0.7
    assert t[-1] == pytest.approx(period)
    assert sx[-1] == pytest.approx(sx[0], abs=1e-5) and sy[-1] == pytest.approx(sy[0], abs=1e-5)
    quarter = np.argmin(np.abs(t - period / 4))
    assert abs(sy[quarter]) == pytest.approx(0.5, abs=1e-3)
    doc = manifest(out)
    assert doc["status"] == "complete" and doc["command"] == "evolve"
    for entry in doc["files"]:
        assert hashlib.sha256((out / entry["path"]).read_bytes()).hexdigest() == entry["sha256"]
    report = json.loads((out / "report.json").read_text())
    assert report["max_norm_drift_per_step"] < 1e-10


def test_reproducible_manifests(tmp_path):
    path = write(tmp_path, small_trajectory_doc())
    for name in ("a", "b"):
        assert main(["trajectories", "--config", str(path), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    files = {e["path"] for e in manifest(tmp_path / "a")["files"]}
    assert {"ledger.csv", "trajectories.csv", "report.json", "frame_00000.edspin", "frame_00000.json"} <= files
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert len(report["born"]) == 3 and "subquantum" in report
    assert main(["trajectories", "--config", str(path), "--out", str(tmp_path / "c"), "--seed", "5"]) == 0
    assert manifest(tmp_path / "c")["seed"] == 5
    assert (tmp_path / "c" / "trajectories.csv").read_bytes() != (tmp_path / "a" / "trajectories.csv").read_bytes()


def test_json_format(tmp_path):
    path = write(tmp_path, small_trajectory_doc())
    assert main(["evolve", "--config", str(path), "--out", str(tmp_path / "o"), "--format", "json"]) == 0
    ledger = json.loads((tmp_path / "o" / "ledger.json").read_text())
    assert set(ledger[0]) >= {"t", "norm", "energy", "Sx"}


def test_sg_command(tmp_path):
    doc = {"seed": 1, "sg": {"particles": 1000}}
    path = write(tmp_path, doc)
    assert main(["sg", "--config", str(path), "--out", str(tmp_path / "sg")]) == 0
    report = json.loads((tmp_path / "sg" / "sg_report.json").read_text())
    assert abs(report["fraction_up"] - 0.5) < 3 * report["fraction_up_error"]
    rows = list(csv.DictReader(open(tmp_path / "sg" / "sg_particles.csv")))
    assert len(rows) == 1000 and {r["packet"] for r in rows} == {"up", "down"}


def test_check_suite(tmp_path, capsys):
    assert main(["check", "--suite", "geometry", "--out", str(tmp_path)]) == 0
    result = json.loads((tmp_path / "check_geometry.json").read_text())
    assert result["passed"] and result["suite"] == "geometry"
    assert "geometry: PASS" in capsys.readouterr().out


def test_exit_codes(tmp_path):
    assert main(["check", "--suite", "nonsense", "--out", str(tmp_path / "x")]) == 2
    assert manifest(tmp_path / "x")["status"] == "failed"
    with pytest.raises(SystemExit) as info:
        main(["evolve", "--out", str(tmp_path / "y")])
    assert info.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["evolve", "--config", str(bad), "--out", str(tmp_path / "z")]) == 2
    assert not (tmp_path / "z").exists()
    doc = small_trajectory_doc()
    doc["state"] = {"type": "amplitudes", "plus": "0*x", "minus": "0*x", "normalize": False}
    path = write(tmp_path, doc, "runtime.json")
    assert main(["evolve", "--config", str(path), "--out", str(tmp_path / "r")]) == 1
    assert manifest(tmp_path / "r")["status"] == "failed"


def test_config_error_message(tmp_path, capsys):
    doc = small_trajectory_doc()
    doc["evolver"]["dt"] = 0.03
    assert main(["evolve", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path / "o")]) == 2
    assert "/evolver/t_end" in capsys.readouterr().err


def test_console_script(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "edspin.cli", "check", "--suite", "algebra", "--out", str(tmp_path), "--threads", "1"],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    assert "algebra: PASS" in out.stdout
