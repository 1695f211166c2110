import json
import os
import subprocess
import sys

import numpy as np
import pytest

from defect_forge.cli import CSV_HEADER, run_command


def _data(path):
    lines = open(path, encoding="utf-8").read().split("\n")
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    return body[0], np.array([[float(v) for v in ln.split(",")] for ln in body[1:]])


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("solve")
    out = d / "fields.csv"
    rc = run_command(["solve", "--model", "hexagonal", "--r", "0.25", "--theta-deg", "45", "--xmin", "-10",
                      "--xmax", "10", "--points", "2001", "--out", str(out)])
    return rc, out


def test_solve_writes_csv(solved):
    rc, out = solved
    assert rc == 0
    raw = out.read_bytes()
    assert b"\r" not in raw
    header, data = _data(out)
    assert header == CSV_HEADER
    assert data.shape == (2001, 12)
    comments = [ln for ln in raw.decode().split("\n") if ln.startswith("#")]
    assert any("theta_deg" in c for c in comments)


def test_solve_row_at_zero(solved):
    _, data = _data(solved[1])
    row = dict(zip(CSV_HEADER.split(","), data[1000]))
    assert row["x"] == 0.0
    assert row["phi1"] == pytest.approx(0.0, abs=1e-7)
    assert row["phi2"] == pytest.approx(1.0, abs=1e-6)
    assert row["phi3"] == pytest.approx(1.0, abs=1e-6)
    assert row["chi1"] == pytest.approx(0.0, abs=1e-7)
    assert row["chi2"] == pytest.approx(0.623225, abs=1e-6)
    assert row["W"] == pytest.approx(0.0, abs=1e-7)
    assert row["U"] == pytest.approx(0.125, abs=1e-6)
    assert row["Wdef1"] == pytest.approx(0.0, abs=1e-12)
    assert row["Udef"] == pytest.approx(0.125, abs=1e-6)


def test_solve_row_at_xmax(solved):
    _, data = _data(solved[1])
    row = dict(zip(CSV_HEADER.split(","), data[-1]))
    assert row["x"] == 10.0
    assert row["phi1"] == pytest.approx(1.0, abs=1e-3)
    assert row["U"] == pytest.approx(0.0, abs=1e-4)


def test_values_printed_with_17_digits(solved):
    lines = [ln for ln in solved[1].read_text().split("\n") if ln and not ln.startswith("#")]
    assert "0.62322522" in lines[1001]
    v = lines[500].split(",")[1]
    assert float(v) == float("%.17g" % float(v))


def test_solve_deterministic(tmp_path, solved):
    out = tmp_path / "again.csv"
    run_command(["solve", "--r", "0.25", "--theta-deg", "45", "--xmin", "-10", "--xmax", "10", "--points", "2001",
                 "--out", str(out)])
    a = [ln for ln in out.read_text().split("\n") if not ln.startswith("# out")]
    b = [ln for ln in solved[1].read_text().split("\n") if not ln.startswith("# out")]
    assert a == b


def test_bad_r(capsys):
    assert run_command(["solve", "--r", "0.6"]) == 1
    assert "0 < r < 1/2" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv, field",
    [
        (["solve", "--points", "500"], "points"),
        (["solve", "--points", "1000"], "points"),
        (["solve", "--xmin", "1"], "x_min"),
        (["solve", "--tol", "1e-2"], "tol"),
        (["sweep", "--r-values", ""], "r_values"),
        (["sweep", "--r-values", "0.1,0.7"], "r_values"),
        (["solve", "--bogus"], "unrecognized"),
        (["frobnicate"], "invalid choice"),
        (["solve", "--model", "custom", "--fields", "a", "--W", "a +* 2"], "W"),
    ],
)
def test_validation_exit_1(argv, field, capsys):
    assert run_command(argv) == 1
    assert field in capsys.readouterr().err


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"r": 0.3, "theta_deg": 30, "nonsense": 1}))
    assert run_command(["audit", "--config", str(cfg)]) == 1
    assert "nonsense" in capsys.readouterr().err
    cfg.write_text("{not json")
    assert run_command(["audit", "--config", str(cfg)]) == 1
    cfg.write_text(json.dumps({"r": "big"}))
    assert run_command(["audit", "--config", str(cfg)]) == 1
    assert "r" in capsys.readouterr().err
    cfg.write_text(json.dumps({"r": 0.3, "theta_deg": 30}))
    rep = tmp_path / "a.json"
    assert run_command(["audit", "--config", str(cfg), "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["params"] == {"r": 0.3, "theta_deg": 30.0}


def test_audit_command(tmp_path):
    rep = tmp_path / "audit.json"
    assert run_command(["audit", "--r", "0.25", "--theta-deg", "45", "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    gap = [c for c in d["checks"] if c["verdict"] == "discrepancy-expected"]
    assert [c["name"] for c in gap] == ["gap_dWdef1_vs_2Udef"]
    rep2 = tmp_path / "audit2.json"
    run_command(["audit", "--r", "0.25", "--theta-deg", "45", "--report", str(rep2)])
    assert rep.read_bytes() == rep2.read_bytes()


def test_audit_fail_exit_3(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"audit_tols": {"eom_residual": 1e-14}}))
    assert run_command(["audit", "--config", str(cfg), "--report", str(tmp_path / "a.json")]) == 3


def test_numerical_failure_exit_2(tmp_path, capsys):
    # tanh(3) is 5e-3 short of the vacuum, so the landing check must fail
    rc = run_command(["solve", "--model", "custom", "--fields", "p", "--W", "p - p^3/3", "--xmin", "-3",
                      "--xmax", "3", "--points", "501", "--out", str(tmp_path / "f.csv")])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err


def test_custom_single_field(tmp_path):
    out = tmp_path / "c.csv"
    rc = run_command(["solve", "--model", "custom", "--fields", "p", "--W", "p - p^3/3", "--xmin", "-20",
                      "--xmax", "20", "--points", "2001", "--out", str(out)])
    assert rc == 0
    header, data = _data(out)
    assert header == "x,phi1,chi1,W,U,Wdef1,Udef,energy_density"
    np.testing.assert_allclose(data[:, 1], np.tanh(data[:, 0]), atol=1e-6)


def test_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run_command(["sweep", "--r-values", "0.4,0.1,0.25", "--out", str(out)]) == 0
    header, data = _data(out)
    assert header == "r,E,E_BPS,dWdef1,max_audit_residual"
    np.testing.assert_array_equal(data[:, 0], [0.1, 0.25, 0.4])
    np.testing.assert_allclose(data[:, 2], 4 / 3, atol=1e-12)
    assert data[1, 3] == pytest.approx(0.5, abs=1e-8)


def test_vacua(tmp_path):
    out = tmp_path / "v.csv"
    assert run_command(["vacua", "--r", "0.25", "--out", str(out)]) == 0
    lines = [ln for ln in out.read_text().split("\n") if ln and not ln.startswith("#")]
    iso = [ln for ln in lines[1:] if ln.endswith("isolated")]
    assert len(iso) == 2
    assert any(ln.endswith("degenerate") for ln in lines[1:])


def test_deform_summary(tmp_path):
    rep = tmp_path / "d.json"
    assert run_command(["deform", "--out", str(tmp_path / "f.csv"), "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["delta_Wdef"][0] == pytest.approx(0.5, abs=1e-6)
    assert d["E_BPS"] == pytest.approx(4 / 3, abs=1e-12)


def test_threads_env(tmp_path):
    env = dict(os.environ, DEFECT_FORGE_THREADS="1")
    out = tmp_path / "s.csv"
    r = subprocess.run([sys.executable, "-m", "defect_forge", "sweep", "--r-values", "0.2", "--out", str(out)], env=env,
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    env["DEFECT_FORGE_THREADS"] = "many"
    r = subprocess.run([sys.executable, "-m", "defect_forge", "sweep", "--r-values", "0.2", "--out", str(out)], env=env,
                       capture_output=True, text=True)
    assert r.returncode == 1
