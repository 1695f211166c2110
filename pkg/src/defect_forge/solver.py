"""Integration of the first-order flow and shooting between vacua.

The flow is ``dphi/dx = grad W(phi)``.  Integration uses the Dormand-Prince
4(5) embedded pair with PI step-size control.  Accepted steps keep the data
of the pair's fourth-order continuous extension, so the solution can be
sampled anywhere at the accuracy of the steps themselves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .analytic import OrbitConstraint
from .model import DEGENERATE_EIG, FieldModel, Trajectory, Vacuum

__all__ = [
    "SolverError",
    "ShootingError",
    "Steps",
    "dopri45",
    "integrate_bps",
    "integrate_bps_two_sided",
    "shoot_kink",
    "LANDING_TOL",
]

LANDING_TOL = 1e-6

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_A_MAT = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _A_MAT[_i, : len(_row)] = _row
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_LOW
# continuous extension (Hairer, Norsett & Wanner, dopri5 dense output)
_D = np.array([
    -12715105075 / 11282082432,
    0.0,
    87487479700 / 32700410799,
    -10690763975 / 1880347072,
    701980252875 / 199316789632,
    -1453857185 / 822651844,
    69997945 / 29380423,
])


class SolverError(RuntimeError):
    """Integration failed (step underflow, non-finite slope)."""

    def __init__(self, message: str, x: float | None = None):
        super().__init__(message if x is None else f"{message} at x={x:.6g}")
        self.x = x


class ShootingError(SolverError):
    pass


@dataclass
class Steps:
    """Accepted steps of an integration.

    ``x``, ``y`` and ``f`` hold nodes, states and slopes; ``d`` holds the
    per-step coefficient of the continuous extension (one row per step).
    """

    x: np.ndarray
    y: np.ndarray
    f: np.ndarray
    d: np.ndarray
    stopped: bool = False

    def __call__(self, xq) -> np.ndarray:
        """Dense output at ``xq`` (scalar or array)."""
        xq = np.asarray(xq, float)
        scalar = xq.ndim == 0
        xq = np.atleast_1d(xq)
        k = np.clip(np.searchsorted(self.x, xq, side="right") - 1, 0, self.x.size - 2)
        x0, x1 = self.x[k], self.x[k + 1]
        h = (x1 - x0)[:, None]
        th = ((xq - x0) / (x1 - x0))[:, None]
        th1 = 1.0 - th
        y0, y1 = self.y[k], self.y[k + 1]
        diff = y1 - y0
        b = h * self.f[k] - diff
        c = diff - h * self.f[k + 1] - b
        out = y0 + th * (diff + th1 * (b + th * (c + th1 * self.d[k])))
        return out[0] if scalar else out


def dopri45(
    rhs: Callable[[np.ndarray], np.ndarray],
    y0,
    x0: float,
    x1: float,
    tol: float = 1e-8,
    *,
    fixed_step: float | None = None,
    stop: Callable[[float, np.ndarray], bool] | None = None,
    max_steps: int = 1_000_000,
) -> Steps:
    """Integrate ``y' = rhs(y)`` from ``x0`` to ``x1 > x0``.

    With ``fixed_step`` the step size is held constant (no error control),
    otherwise the max-norm local error estimate of every accepted step is
    kept at or below ``tol``.  ``stop(x, y)`` is checked after every accepted
    step and ends the integration early when it returns True.
    """
    if not x1 > x0:
        raise ValueError("integration interval must satisfy x0 < x1")
    y = np.array(y0, dtype=float)
    f = np.asarray(rhs(y), float)
    if not np.all(np.isfinite(f)):
        raise SolverError("non-finite right-hand side", x0)
    xs, ys, fs, ds = [x0], [y.copy()], [f.copy()], []
    x = x0
    span = x1 - x0
    if fixed_step is not None:
        h = float(fixed_step)
    else:
        scale = max(np.max(np.abs(f)), 1e-12)
        h = min(span, 0.01 * tol ** 0.2 / scale * 10.0, 0.1 * span)
    err_prev = 1.0
    beta = 0.04
    alpha = 0.2 - 0.75 * beta
    k = np.empty((7, y.size))
    stopped = False
    for _ in range(max_steps):
        if x >= x1:
            break
        if x + h > x1:
            h = x1 - x
        hmin = 1e-14 * max(1.0, abs(x))
        if h < hmin:
            raise SolverError("step size underflow", x)
        k[0] = f
        for s in range(1, 7):
            ys_stage = y + h * (_A_MAT[s, :s] @ k[:s])
            ks = np.asarray(rhs(ys_stage), float)
            if not np.all(np.isfinite(ks)):
                ks = None
                break
            k[s] = ks
        if ks is None:
            if fixed_step is not None:
                raise SolverError("non-finite right-hand side", x)
            h *= 0.25
            continue
        y_new = y + h * (_B @ k)
        f_new = k[6].copy()  # FSAL
        if fixed_step is None:
            err = np.max(np.abs(h * (_E @ k))) / tol
            if err > 1.0:
                h *= max(0.2, 0.9 * err ** (-alpha))
                continue
            err = max(err, 1e-10)
            factor = 0.9 * err ** (-alpha) * err_prev**beta
            h_next = h * min(5.0, max(0.2, factor))
            err_prev = err
        else:
            h_next = h
        x = x + h if x + h < x1 else x1
        y, f = y_new, f_new
        xs.append(x)
        ys.append(y.copy())
        fs.append(f.copy())
        ds.append(h * (_D @ k))
        h = h_next
        if stop is not None and stop(x, y):
            stopped = True
            break
    else:
        raise SolverError("maximum number of steps exceeded", x)
    d = np.array(ds) if ds else np.zeros((0, y.size))
    return Steps(np.array(xs), np.array(ys), np.array(fs), d, stopped)


def _flow(m: FieldModel, sign: float = 1.0):
    grad = m._grad

    if sign > 0:
        def rhs(y):
            return np.array(grad(*y.tolist()))
    else:
        def rhs(y):
            return -np.array(grad(*y.tolist()))

    return rhs


def integrate_bps(
    m: FieldModel,
    start: Sequence[float],
    x0: float,
    x1: float,
    tol: float = 1e-8,
    points: int | None = 2001,
    grid: np.ndarray | None = None,
    reverse: bool = False,
) -> Trajectory:
    """Solve ``dphi/dx = grad W`` (or ``-grad W`` with ``reverse``) from ``start``.

    The solution is sampled on ``grid`` if given, else on ``points`` uniform
    points over ``[x0, x1]``.  The returned derivative column is the flow
    right-hand side at the sampled fields.
    """
    if not (1e-12 <= tol <= 1e-4):
        raise ValueError(f"tol={tol!r} outside [1e-12, 1e-4]")
    if not x0 < x1:
        raise ValueError("integrate_bps needs x0 < x1")
    start = np.asarray(start, float)
    if start.shape != (m.n_fields,):
        raise ValueError(f"start must have {m.n_fields} components")
    steps = dopri45(_flow(m, -1.0 if reverse else 1.0), start, x0, x1, tol)
    if grid is None:
        grid = np.linspace(x0, x1, points)
    values = steps(np.asarray(grid, float))
    t = Trajectory.bps(m, grid, values)
    if reverse:
        return Trajectory(t.x, t.values, -t.derivatives, t.fields)
    return t


def integrate_bps_two_sided(
    m: FieldModel,
    center: Sequence[float],
    grid: np.ndarray,
    tol: float = 1e-8,
) -> Trajectory:
    """Solve the flow through ``center`` placed at ``x = 0``, sampled on ``grid``.

    The part with ``x > 0`` is integrated forward, the part with ``x < 0``
    with the reversed flow, so each half runs toward the vacuum it
    approaches.  This is the well-conditioned way to follow a connecting
    orbit: marching away from a source amplifies errors transverse to it.
    """
    grid = np.asarray(grid, float)
    center = np.asarray(center, float)
    fwd_x = grid[grid >= 0]
    bwd_x = -grid[grid < 0][::-1]
    pieces = []
    if bwd_x.size:
        back = dopri45(_flow(m, -1.0), center, 0.0, bwd_x[-1], tol)
        pieces.append(back(bwd_x)[::-1])
    if fwd_x.size:
        if fwd_x[-1] > 0:
            pieces.append(dopri45(_flow(m), center, 0.0, fwd_x[-1], tol)(fwd_x))
        else:
            pieces.append(center[None, :])
    return Trajectory.bps(m, grid, np.concatenate(pieces, axis=0))


# ---------------------------------------------------------------------------
# shooting


def _crossing_field(a: np.ndarray, b: np.ndarray) -> int:
    for k in range(a.size):
        if a[k] * b[k] < 0:
            return k
    return int(np.argmax(np.abs(b - a)))


def _hermite_root(steps: Steps, k: int, level: float) -> float | None:
    """First x where component ``k`` of the Hermite interpolant hits ``level``."""
    vals = steps.y[:, k] - level
    sign0 = np.sign(vals[0])
    idx = np.nonzero(np.sign(vals[1:]) != sign0)[0]
    if idx.size == 0:
        return None
    j = idx[0]
    a, b = steps.x[j], steps.x[j + 1]
    g = lambda xq: steps(xq)[k] - level
    ga, gb = g(a), g(b)
    if ga == 0:
        return a
    if gb == 0 or ga * gb > 0:
        return b
    return brentq(g, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def shoot_kink(
    m: FieldModel,
    from_vac: Vacuum,
    to_vac: Vacuum,
    offset_scale: float = 1e-2,
    L: float = 24.0,
    tol: float = 1e-10,
    *,
    seed: Sequence[float] | None = None,
    orbit: OrbitConstraint | None = None,
    points: int = 2001,
    bisect_step: float = 0.02,
    max_bisect: int = 200,
    grid: np.ndarray | None = None,
) -> Trajectory:
    """Construct a BPS defect from ``from_vac`` to ``to_vac`` by shooting.

    The launch point is ``from + offset_scale * (cos a * d + sin a * v)``
    where ``v`` is the most unstable eigenvector of the Hessian of ``W`` at
    ``from_vac`` and ``d`` is the remaining unstable part of ``seed``.  The
    mix angle ``a`` is bisected:

    * with ``orbit``: until the orbit residual vanishes where the crossing
      field passes midway between the vacua; this picks the member of a
      family of connecting orbits that lies on the given constraint;
    * without: until the trajectory lands within ``LANDING_TOL`` of
      ``to_vac``, starting from the seed's own mix.

    The state at the crossing is then integrated outward in both directions
    and ``x`` is recentred so the crossing sits at ``x = 0``.  The result is
    sampled on ``points`` uniform points over ``[-L, L]``, or on ``grid``.
    """
    a = np.asarray(from_vac.point, float)
    b = np.asarray(to_vac.point, float)
    grid = np.linspace(-L, L, points) if grid is None else np.asarray(grid, float)
    points = grid.size
    if np.allclose(a, b, rtol=0.0, atol=1e-12):
        return Trajectory.bps(m, grid, np.tile(a, (points, 1)))
    if offset_scale <= 0:
        raise ShootingError("zero offset cannot leave a vacuum toward a different one")

    eig, vec = np.linalg.eigh(m.hess(a))
    unstable = eig > DEGENERATE_EIG
    if not np.any(unstable):
        raise ShootingError(f"vacuum {tuple(a)} has no unstable flow direction (eigenvalues {eig})")
    U = vec[:, unstable]
    v_fast = vec[:, int(np.argmax(eig))]
    if np.dot(v_fast, b - a) < 0:
        v_fast = -v_fast
    seed_vec = (b - a) if seed is None else np.asarray(seed, float)
    proj = U @ (U.T @ seed_vec)
    d = proj - np.dot(proj, v_fast) * v_fast
    has_slow = np.linalg.norm(d) > 1e-12 * max(1.0, np.linalg.norm(proj))
    d = d / np.linalg.norm(d) if has_slow else d

    k = _crossing_field(a, b)
    level = 0.5 * (a[k] + b[k])
    span_raw = 4.0 * L
    blowup = 1e3 * max(1.0, np.max(np.abs(a)), np.max(np.abs(b)))
    rhs = _flow(m)

    def launch(alpha: float) -> np.ndarray:
        return a + offset_scale * (math.cos(alpha) * d + math.sin(alpha) * v_fast)

    def stop_at_crossing(x, y):
        return (y[k] - level) * (a[k] - level) <= 0 or not np.all(np.abs(y) < blowup)

    def raw(alpha: float, stop=stop_at_crossing) -> Steps | None:
        try:
            return dopri45(rhs, launch(alpha), 0.0, span_raw, fixed_step=bisect_step, stop=stop)
        except SolverError:
            return None

    def crossing_state(steps: Steps | None):
        if steps is None or not steps.stopped:
            return None
        xc = _hermite_root(steps, k, level)
        if xc is None:
            return None
        return xc, steps(xc)

    def lands(alpha: float) -> bool:
        def arrived(x, y):
            return np.linalg.norm(y - b) <= LANDING_TOL or not np.all(np.abs(y) < blowup)

        steps = raw(alpha, stop=arrived)
        return steps is not None and np.linalg.norm(steps.y[-1] - b) <= LANDING_TOL

    if not has_slow:
        alpha = math.pi / 2
    elif orbit is not None:
        def g(alpha):
            c = crossing_state(raw(alpha))
            return None if c is None else orbit(c[1])

        hi = math.pi / 2
        g_hi = g(hi)
        if g_hi is None or g_hi == 0:
            alpha = hi
        else:
            lo = 0.0
            g_lo = g(lo)
            if g_lo is not None and np.sign(g_lo) == np.sign(g_hi):
                raise ShootingError(
                    f"orbit residual does not change sign over the mix angle (ends: {g_lo:.3g}, {g_hi:.3g})"
                )
            # Illinois false position when both ends are known, halving otherwise
            side = 0
            alpha = 0.5 * (lo + hi)
            for _ in range(max_bisect):
                if g_lo is None:
                    alpha = 0.5 * (lo + hi)
                else:
                    alpha = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
                    if not (lo < alpha < hi):
                        alpha = 0.5 * (lo + hi)
                ga = g(alpha)
                if ga is not None and abs(ga) <= 1e-13:
                    break
                if ga is not None and np.sign(ga) == np.sign(g_hi):
                    hi, g_hi = alpha, ga
                    if side == 1 and g_lo is not None:
                        g_lo *= 0.5
                    side = 1
                else:
                    lo, g_lo = alpha, ga
                    if side == -1:
                        g_hi *= 0.5
                    side = -1
                if hi - lo <= 1e-12 * max(hi, 1e-300):
                    break
    else:
        alpha = math.atan2(np.dot(seed_vec, v_fast), np.linalg.norm(proj - np.dot(proj, v_fast) * v_fast))
        alpha = min(max(alpha, 0.0), math.pi / 2)
        if not lands(alpha):
            lo, hi = alpha, math.pi / 2
            if not lands(hi):
                raise ShootingError("neither the seed mix nor the fast direction lands on the target vacuum")
            for _ in range(max_bisect):
                mid = 0.5 * (lo + hi)
                if lands(mid):
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-9:
                    break
            alpha = hi

    c = crossing_state(raw(alpha))
    if c is None:
        raise ShootingError("trajectory never crosses between the vacua")
    yc = c[1]

    t = integrate_bps_two_sided(m, yc, grid, tol)
    values = t.values
    end_gap = float(np.linalg.norm(values[-1] - b))
    if end_gap > LANDING_TOL:
        start_gap = float(np.linalg.norm(values[0] - a))
        raise ShootingError(
            f"trajectory misses the target vacuum: |phi(+L) - to| = {end_gap:.3g}, |phi(-L) - from| = {start_gap:.3g}"
        )
    return t
