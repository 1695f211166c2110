"""Acceptance criteria, one test per criterion (or sub-claim).

Each test carries an ``acceptance`` marker; the terminal summary prints one
PASS/FAIL line per criterion.  Run directly with
``python3 tests/test_acceptance.py`` or through pytest.
"""
import math
import time

import numpy as np
import pytest

from defect_forge.analytic import (
    HexParams,
    analytic_derivative,
    analytic_solution,
    hexagonal_model,
    hexagonal_orbit,
    hexagonal_vacua,
    orbit_residual,
)
from defect_forge.cli import CSV_HEADER, run_command
from defect_forge.deform import builtin_tan_deformation, deform_trajectory, deformed_bps_energy, essential_condition_residual
from defect_forge.model import Trajectory, eom_residual
from defect_forge.report import bps_bound, bps_defect, consistency_audit, default_audit_grid, total_energy
from defect_forge.solver import integrate_bps_two_sided, shoot_kink

R = 0.25
THETA = math.radians(45.0)
P = HexParams(R, THETA)
M = hexagonal_model(R)


def closed(x):
    return Trajectory(x, analytic_solution(P, x), analytic_derivative(P, x), M.fields)


@pytest.fixture(scope="module")
def audit_grid_traj():
    return closed(default_audit_grid(R))


@pytest.fixture(scope="module")
def tan_prof(audit_grid_traj):
    bd = builtin_tan_deformation(R, THETA)
    return bd, deform_trajectory(M, bd.deformation, audit_grid_traj, orbit=hexagonal_orbit(R))


@pytest.mark.acceptance(1, "first-order residual <= 1e-12, runtime < 1 s")
def test_c01_first_order_residual():
    t0 = time.perf_counter()
    x = np.linspace(-10, 10, 2001)
    res = np.max(np.abs(analytic_derivative(P, x) - M.grad(analytic_solution(P, x))))
    elapsed = time.perf_counter() - t0
    assert res <= 1e-12
    assert elapsed < 1.0


@pytest.mark.acceptance(2, "EOM residual <= 1e-5 on 2001 points over [-10, 10]")
def test_c02_eom_residual():
    _, worst = eom_residual(M, closed(np.linspace(-10, 10, 2001)))
    assert worst <= 1e-5


@pytest.mark.acceptance(3, "orbit residual <= 1e-15 closed form, <= 1e-8 integrated at tol 1e-8")
def test_c03_orbit_conservation():
    x = np.linspace(-10, 10, 2001)
    assert np.max(np.abs(orbit_residual(P, analytic_solution(P, x)))) <= 1e-15
    t = integrate_bps_two_sided(M, analytic_solution(P, 0.0), x, tol=1e-8)
    assert np.max(np.abs(orbit_residual(P, t.values))) <= 1e-8


@pytest.mark.acceptance(4, "shooting (-1,0,0) -> (1,0,0) field error <= 1e-5, runtime < 5 s")
def test_c04_shooting():
    vm, vp = hexagonal_vacua(M)
    t0 = time.perf_counter()
    t = shoot_kink(M, vm, vp, L=48, points=4001, seed=(0.0, math.cos(THETA), math.sin(THETA)), orbit=hexagonal_orbit(R))
    elapsed = time.perf_counter() - t0
    assert np.max(np.abs(t.values - analytic_solution(P, t.x))) <= 1e-5
    assert elapsed < 5.0


@pytest.mark.acceptance(5, "E = 4/3 +- 1e-6, BPS excess <= 1e-10, E - E_BPS - excess <= 1e-8 off the flow")
def test_c05_energy():
    x = np.linspace(-48, 48, 4001)
    t = closed(x)
    assert total_energy(M, t).energy == pytest.approx(4 / 3, abs=1e-6)
    assert bps_defect(M, t) <= 1e-10
    v, d = t.values.copy(), t.derivatives.copy()
    s = 1 / np.cosh(x)
    v[:, 0] += 0.01 * s
    d[:, 0] -= 0.01 * s * np.tanh(x)
    tp = Trajectory(x, v, d, M.fields)
    excess = bps_defect(M, tp)
    assert excess > 0
    assert abs(total_energy(M, tp).energy - bps_bound(M, v[0], v[-1]) - excess) <= 1e-8


@pytest.mark.acceptance(6, "chi2/chi3 <= 1e-8, Wdef1 <= 1e-8, Udef <= 1e-12, delta Wdef1 = 0.5 +- 1e-8")
def test_c06_deformation_closed_forms(tan_prof):
    bd, prof = tan_prof
    x = prof.x
    chi = bd.closed.chi(x)
    assert np.max(np.abs(prof.chi[:, 1:] - chi[:, 1:])) <= 1e-8
    assert np.max(np.abs(prof.W_def[:, 0] - R * np.tanh(4 * R * x))) <= 1e-8
    assert np.max(np.abs(prof.U_def - bd.closed.U_def(x))) <= 1e-12
    assert deformed_bps_energy(prof).components[0] == pytest.approx(0.5, abs=1e-8)


@pytest.mark.acceptance(7, "essential condition <= 1e-9, common derivative = 1 + tanh^2 <= 1e-10")
def test_c07_essential_condition(tan_prof, audit_grid_traj):
    bd, prof = tan_prof
    assert np.max(essential_condition_residual(bd.deformation, audit_grid_traj, prof)) <= 1e-9
    common = 1 + np.tanh(2 * R * prof.x) ** 2
    assert np.max(np.abs(prof.fprime - common[:, None])) <= 1e-10


@pytest.mark.acceptance(8, "audit gap max 0.0625 +- 1e-6 at tanh^2 = 1/3 +- 1e-4, discrepancy-expected, formula <= 1e-8")
def test_c08_audit_finding():
    rep = consistency_audit(R, THETA)
    gap = rep["gap_dWdef1_vs_2Udef"]
    assert gap.verdict == "discrepancy-expected"
    assert gap.max_abs == pytest.approx(0.0625, abs=1e-6)
    assert abs(rep.extras["gap_argmax_tanh2"] - 1 / 3) <= 1e-4
    assert rep["gap_formula"].max_abs <= 1e-8 and rep["gap_formula"].verdict == "pass"


@pytest.fixture(scope="module")
def default_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig") / "fields.csv"
    assert run_command(["solve", "--out", str(out)]) == 0
    lines = [ln for ln in out.read_text().split("\n") if ln and not ln.startswith("#")]
    assert lines[0] == CSV_HEADER
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return dict(zip(CSV_HEADER.split(","), data.T))


def _kink(c, name):
    v = c[name]
    assert np.max(np.abs(v + v[::-1])) <= 1e-7, f"{name} not odd"
    assert np.all(np.diff(v) > 0), f"{name} not monotone"


def _lump_shape(c, name):
    v = c[name]
    k = v.size // 2
    assert c["x"][k] == 0.0
    assert np.max(np.abs(v - v[::-1])) <= 1e-7, f"{name} not even"
    assert int(np.argmax(v)) == k, f"{name} max not at x=0"
    assert np.all(np.diff(v[: k + 1]) > 0) and np.all(np.diff(v[k:]) < 0), f"{name} not unimodal"


LUMPS = ("phi2", "phi3", "chi2", "chi3")


@pytest.mark.acceptance(9, "default solve CSV: kinks odd and monotone, lumps even and unimodal with max at 0")
def test_c09_figure_shapes(default_csv):
    for name in ("phi1", "chi1"):
        _kink(default_csv, name)
    for name in LUMPS:
        _lump_shape(default_csv, name)


@pytest.mark.acceptance(9, "default solve CSV: lump tails <= 1e-8")
@pytest.mark.xfail(strict=True, reason="on [-10, 10] at r=0.25 the exact lumps are still ~1e-2 at the ends; see ledger")
def test_c09_figure_tails_default_domain(default_csv):
    for name in LUMPS:
        v = default_csv[name]
        assert max(abs(v[0]), abs(v[-1])) <= 1e-8, f"{name} tail {v[-1]:.3g}"


@pytest.mark.acceptance(9, "solve CSV on [-48, 48]: shapes hold and lump tails <= 1e-8")
def test_c09_figure_tails_tail_domain(tmp_path):
    out = tmp_path / "fields.csv"
    assert run_command(["solve", "--xmin", "-48", "--xmax", "48", "--points", "4801", "--out", str(out)]) == 0
    lines = [ln for ln in out.read_text().split("\n") if ln and not ln.startswith("#")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    c = dict(zip(CSV_HEADER.split(","), data.T))
    x = c["x"]
    core = np.abs(x) <= 30  # beyond this the profiles sit at the rounding floor
    for name in LUMPS:
        v = c[name]
        assert max(abs(v[0]), abs(v[-1])) <= 1e-8, f"{name} tail {v[-1]:.3g}"
        assert np.max(np.abs(v - v[::-1])) <= 1e-7
        assert int(np.argmax(v)) == v.size // 2
        dv = np.diff(v)
        mid = 0.5 * (x[1:] + x[:-1])
        assert np.all(dv[core[1:] & (mid < 0)] > 0) and np.all(dv[core[1:] & (mid > 0)] < 0)
    for name in ("phi1", "chi1"):
        # outside the core only the integrator tolerance (1e-10) bounds the wiggle
        assert np.all(np.diff(c[name]) >= -1e-10) and np.all(np.diff(c[name])[core[1:]] > 0)


@pytest.mark.acceptance(10, "sweep r in {0.1, 0.2, 0.3, 0.4}: E_BPS = 4/3 and delta Wdef1 = 2r, +- 1e-8")
def test_c10_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run_command(["sweep", "--r-values", "0.1,0.2,0.3,0.4", "--out", str(out)]) == 0
    lines = [ln for ln in out.read_text().split("\n") if ln and not ln.startswith("#")]
    assert lines[0] == "r,E,E_BPS,dWdef1,max_audit_residual"
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    np.testing.assert_array_equal(rows[:, 0], [0.1, 0.2, 0.3, 0.4])
    assert np.max(np.abs(rows[:, 2] - 4 / 3)) <= 1e-8
    assert np.max(np.abs(rows[:, 3] - 2 * rows[:, 0])) <= 1e-8


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
