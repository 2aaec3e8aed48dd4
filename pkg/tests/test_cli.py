import csv
import json
import subprocess
import sys

import pytest

from egfl.cli import main
from egfl.config import load_config

SHORT = {"extends": "table1_sim", "scenario": {"duration_s": 0.05}}


def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _status(out):
    return json.loads((out / "status.json").read_text())


def test_design_report(tmp_path):
    out = tmp_path / "d"
    assert main(["design", "--config", "table1_sim", "--out", str(out)]) == 0
    rep = json.loads((out / "design.json").read_text())
    assert rep["sync"]["passed"]
    assert {"kd", "k1q", "k2q"} <= set(rep["controllers"])
    assert {"kc_d", "kv_d", "ki"} <= set(rep["realization"])
    assert rep["predicted_pm_deg"]["d"] == pytest.approx(46.4, abs=0.1)
    st = _status(out)
    assert st["exit_code"] == 0 and st["status"] == "pass"
    man = json.loads((out / "manifest.json").read_text())
    assert man["version"] and man["resolved_config"]["line"]["L_henry"] == 1e-3
    assert man["wall_clock_s"] >= 0


def test_alpha_above_one_is_invalid_input(tmp_path):
    cfg = _write(tmp_path, "bad.json", {"extends": "table1_sim", "design": {"alpha_d": 1.5}})
    out = tmp_path / "o"
    assert main(["design", "--config", cfg, "--out", str(out)]) == 2
    st = _status(out)
    assert st["status"] == "invalid_input" and "alpha_d" in st["message"]
    assert (out / "manifest.json").is_file()


def test_missing_line_is_invalid_input(tmp_path):
    cfg = load_config("table1_sim")
    del cfg["line"]
    out = tmp_path / "o"
    assert main(["design", "--config", _write(tmp_path, "c.json", cfg), "--out", str(out)]) == 2


def test_analyze_outputs(tmp_path):
    out = tmp_path / "a"
    assert main(["analyze", "--config", "table1_sim", "--out", str(out), "--grid-points", "400"]) == 0
    with open(out / "analysis.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 400
    assert {"omega_rad_per_s", "Sd_mag", "Sq_mag", "eps", "xc_gap", "xc_bound", "Ttheta_mag", "Tv_mag"} <= set(rows[0])
    rep = json.loads((out / "analysis.json").read_text())
    assert {"Ms", "PM_deg", "GM", "omega_B", "omega_T"} <= set(rep["loops"]["d"])
    assert (out / "analysis.png").stat().st_size > 0


def test_robust_stability_needs_a_box(tmp_path):
    cfg = _write(tmp_path, "c.json", {"extends": "table1_sim", "analysis": {"checks": ["rs"]}})
    assert main(["analyze", "--config", cfg, "--out", str(tmp_path / "o"), "--no-plots"]) == 2


def test_failed_check_exit_code(tmp_path):
    out = tmp_path / "o"
    assert main(["analyze", "--config", "design_printed_corner", "--out", str(out), "--no-plots"]) == 1
    assert not {c["name"]: c["passed"] for c in _status(out)["checks"]}["nominal"]


def test_simulate_outputs(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", "--config", _write(tmp_path, "c.json", SHORT), "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0].startswith("t [s],iga_d [A],ig_q [A],vc_d [V]")
    assert len(lines) == 1001
    assert all(len(v.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 9 for v in lines[500].split(","))
    assert json.loads((out / "metrics.json").read_text())["metrics"]["status"] == "ok"
    assert (out / "trace.png").stat().st_size > 0


def test_divergence_exit_code_keeps_partial_trace(tmp_path):
    cfg = _write(tmp_path, "c.json", {"extends": "table1_sim",
                                      "inverter": {"vdc_volt": 1e9, "fs_hz": 2000.0, "fsw_hz": 2000.0},
                                      "scenario": {"duration_s": 0.5}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--no-plots"]) == 3
    n = len((out / "trace.csv").read_text().splitlines()) - 1
    assert 0 < n < 1000
    assert _status(out)["status"] == "divergence"


def test_manifest_snapshot_reproduces_outputs(tmp_path):
    a = tmp_path / "a"
    assert main(["simulate", "--config", _write(tmp_path, "c.json", SHORT), "--out", str(a), "--no-plots"]) == 0
    snap = json.loads((a / "manifest.json").read_text())["resolved_config"]
    b = tmp_path / "b"
    assert main(["simulate", "--config", _write(tmp_path, "snap.json", snap), "--out", str(b), "--no-plots"]) == 0
    for f in ("trace.csv", "metrics.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_sweep_parallel(tmp_path, monkeypatch):
    monkeypatch.setenv("EGFL_THREADS", "2")
    cfg = _write(tmp_path, "c.json", {**SHORT, "sweep": {"parameters": ["design.omega_theta_hz"], "values": [5, 10, 20]}})
    out = tmp_path / "w"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--no-plots"]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["design.omega_theta_hz"] for r in rows] == ["5", "10", "20"]
    assert all((out / f"run_{i:03d}" / "trace.csv").is_file() for i in range(3))


def test_sweep_command_line_values(tmp_path, monkeypatch):
    monkeypatch.setenv("EGFL_THREADS", "1")
    cfg = _write(tmp_path, "c.json", SHORT)
    out = tmp_path / "w"
    code = main(["sweep", "--config", cfg, "--out", str(out), "--no-plots",
                 "--param", "line.L_henry", "--param", "line.R_ohm", "--values", "[[0.001, 0.001], [0.002, 0.01]]"])
    assert code == 0
    assert len((out / "sweep.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize("values", ["[]", "[1.0]"])
def test_sweep_rejects_bad_values(tmp_path, values):
    cfg = _write(tmp_path, "c.json", SHORT)
    param = "line" if values == "[1.0]" else "line.L_henry"
    out = tmp_path / "w"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--param", param, "--values", values]) == 2


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("EGFL_THREADS", "zero")
    cfg = _write(tmp_path, "c.json", {**SHORT, "sweep": {"parameters": ["line.L_henry"], "values": [0.001, 0.002]}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "w"), "--no-plots"]) == 2


def test_console_entry_point(tmp_path):
    out = tmp_path / "o"
    r = subprocess.run([sys.executable, "-m", "egfl.cli", "design", "--config", "table1_sim", "--out", str(out),
                        "--seedless"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads((out / "manifest.json").read_text())["options"]["seedless"] is True
