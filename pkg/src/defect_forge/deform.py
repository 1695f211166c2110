"""Orbit-based deformation of a BPS solution.

A deformation replaces each field by an invertible map ``phi_i = f_i(chi_i)``.
Along a solution whose derivatives ``f_i'`` agree up to sign (the essential
condition), the deformed model has superpotential components

    Wdef_i = int W_{phi_i} / f_i'(chi_i) dchi_i

and potential ``Udef = U / f'(chi)^2``.  Every quantity here is sampled on the
grid of a source :class:`~defect_forge.model.Trajectory`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .analytic import HexParams, OrbitConstraint, _check_r, analytic_derivative, analytic_solution, closed_profiles
from .expr import Expr, compile_expr, differentiate, free_variables, invert_monotone, parse, substitute
from .model import FieldModel, Trajectory
from .quadrature import cumulative_simpson

__all__ = [
    "DeformationError",
    "EssentialConditionError",
    "Deformation",
    "DeformedProfile",
    "DeformedEnergy",
    "TanClosedForm",
    "make_deformation",
    "identity_deformation",
    "essential_condition_residual",
    "pull_back_fields",
    "deformed_superpotential_component",
    "deformed_superpotential",
    "deformed_potential",
    "deformed_bps_energy",
    "deform_trajectory",
    "builtin_tan_deformation",
]

ESSENTIAL_TOL = 1e-6
MONOTONE_SAMPLES = 1000
MIN_GRID = 501
FLAT_TAIL_TOL = 1e-10
ORBIT_TOL = 1e-6


class DeformationError(ValueError):
    """Invalid deformation or a profile it cannot be applied to."""


class EssentialConditionError(DeformationError):
    def __init__(self, max_residual: float, tol: float):
        super().__init__(
            f"essential condition violated: max |f1' -/+ fj'| = {max_residual:.3e} exceeds {tol:.1e}; "
            "the deformed potential U/f'^2 is not well defined"
        )
        self.max_residual = max_residual


@dataclass(frozen=True, eq=False)
class Deformation:
    """Per-field maps ``f_i(chi_i)``.

    ``strategy`` selects how :func:`pull_back_fields` obtains ``chi_2..N``:
    ``"quadrature"`` integrates ``(dchi_1/dphi_1) dphi_j`` along the solution,
    ``"invert"`` solves ``f_j(chi_j) = phi_j`` directly.  ``chi_1`` is always
    found by inversion.
    """

    maps: tuple[Expr, ...]
    variables: tuple[str, ...]
    brackets: tuple[tuple[float, float], ...]
    derivatives: tuple[Expr, ...] = field(default=(), repr=False)
    params: Mapping[str, float] = field(default_factory=dict)
    strategy: str = "quadrature"

    def __post_init__(self):
        n = len(self.maps)
        if n == 0 or len(self.variables) != n or len(self.brackets) != n:
            raise DeformationError("maps, variables and brackets must have the same nonzero length")
        if self.strategy not in ("quadrature", "invert"):
            raise DeformationError(f"unknown strategy {self.strategy!r} (use 'quadrature' or 'invert')")
        params = dict(self.params)
        if not self.derivatives:
            object.__setattr__(self, "derivatives", tuple(differentiate(f, v) for f, v in zip(self.maps, self.variables)))
        object.__setattr__(self, "params", params)
        fns, dfns = [], []
        for i, (f, df, v) in enumerate(zip(self.maps, self.derivatives, self.variables)):
            extra = free_variables(f) - {v} - set(params)
            if extra:
                raise DeformationError(f"map {i + 1} may depend only on {v}; also uses {sorted(extra)}")
            fns.append(compile_expr(f, [v], params))
            dfns.append(compile_expr(df, [v], params))
        object.__setattr__(self, "_f", tuple(fns))
        object.__setattr__(self, "_df", tuple(dfns))
        self._check_monotone()

    def _check_monotone(self):
        for i, (lo, hi) in enumerate(self.brackets):
            if not lo < hi:
                raise DeformationError(f"bracket {i + 1} is empty: {(lo, hi)}")
            s = np.linspace(lo, hi, MONOTONE_SAMPLES)
            try:
                d = self.derivative(i, s)
                v = self.apply(i, s)
            except ArithmeticError as exc:
                raise DeformationError(f"map {i + 1} is not defined on its bracket: {exc}") from exc
            if not (np.all(d > 0) or np.all(d < 0)):
                raise DeformationError(f"derivative of map {i + 1} vanishes or changes sign on {(lo, hi)}")
            dv = np.diff(v)
            if not (np.all(dv > 0) or np.all(dv < 0)) or np.sign(dv[0]) != np.sign(d[0]):
                raise DeformationError(f"map {i + 1} is not monotone on {(lo, hi)} (pole or branch jump?)")

    @property
    def n_fields(self) -> int:
        return len(self.maps)

    def apply(self, i: int, chi) -> np.ndarray:
        return np.broadcast_to(np.asarray(self._f[i](np.asarray(chi, float)), float), np.shape(chi)).copy()

    def derivative(self, i: int, chi) -> np.ndarray:
        return np.broadcast_to(np.asarray(self._df[i](np.asarray(chi, float)), float), np.shape(chi)).copy()

    def invert(self, i: int, phi, tol: float = 1e-13) -> np.ndarray:
        return invert_monotone(self.maps[i], phi, self.brackets[i], tol=tol, var=self.variables[i], constants=self.params)


def make_deformation(
    maps: Sequence[str | Expr],
    brackets: Sequence[tuple[float, float]] | None = None,
    variables: Sequence[str] | None = None,
    params: Mapping[str, float] | None = None,
    strategy: str = "quadrature",
) -> Deformation:
    """Build a :class:`Deformation` from expression texts.

    Variables default to ``chi1, chi2, ...``; brackets to ``(-1.5, 1.5)``.
    """
    exprs = tuple(parse(m) if isinstance(m, str) else m for m in maps)
    n = len(exprs)
    variables = tuple(variables or (f"chi{k + 1}" for k in range(n)))
    brackets = tuple(tuple(map(float, b)) for b in (brackets or [(-1.5, 1.5)] * n))
    return Deformation(exprs, variables, brackets, params=dict(params or {}), strategy=strategy)


def identity_deformation(n: int = 3, bracket: tuple[float, float] = (-10.0, 10.0)) -> Deformation:
    names = [f"chi{k + 1}" for k in range(n)]
    return make_deformation(names, [bracket] * n, names, strategy="invert")


@dataclass(frozen=True, eq=False)
class DeformedProfile:
    """Deformed fields and derived series on a trajectory grid.

    ``fprime`` holds ``df_i/dchi_i`` at the sampled ``chi``.  ``W_def`` and
    ``U_def`` are filled by :func:`deform_trajectory` (``None`` after a bare
    pull-back).  ``fallback`` is set when quadrature had to use the trapezoid
    rule on an uneven grid.
    """

    x: np.ndarray
    phi: np.ndarray
    dphi_dx: np.ndarray
    chi: np.ndarray
    fprime: np.ndarray
    fallback: bool = False
    W_def: np.ndarray | None = None
    U_def: np.ndarray | None = None

    @property
    def dchi_dx(self) -> np.ndarray:
        return self.dphi_dx / self.fprime


def _fprime(d: Deformation, chi: np.ndarray) -> np.ndarray:
    out = np.empty_like(chi)
    for i in range(d.n_fields):
        out[:, i] = d.derivative(i, chi[:, i])
    return out


def pull_back_fields(d: Deformation, t: Trajectory, strategy: str | None = None) -> DeformedProfile:
    """Deformed fields ``chi_i(x)`` along ``t``.

    ``chi_1 = f_1^{-1}(phi_1)``.  With the quadrature strategy the other
    fields are ``chi_j(x) = -int_x^inf phi_j' / f_1'(chi_1) dx``: the grid part
    by Simpson's rule, the rest beyond ``x_max`` as ``phi_j(x_max) / f_1'``
    (exact once ``phi_1`` has settled).
    """
    strategy = strategy or d.strategy
    if d.n_fields != len(t.fields):
        raise DeformationError(f"deformation has {d.n_fields} maps, trajectory {len(t.fields)} fields")
    if t.x.size < MIN_GRID:
        raise DeformationError(f"pull-back needs at least {MIN_GRID} grid points, got {t.x.size}")
    n, N = t.values.shape
    chi = np.empty((n, N))
    chi[:, 0] = d.invert(0, t.values[:, 0])
    fallback = False
    if strategy == "invert":
        for j in range(1, N):
            chi[:, j] = d.invert(j, t.values[:, j])
    else:
        f1 = d.derivative(0, chi[:, 0])
        if np.any(f1 == 0):
            raise DeformationError("df1/dchi1 vanishes on the path")
        integrand = t.derivatives[:, 1:] / f1[:, None]
        if N > 1:
            F, fallback = cumulative_simpson(integrand, t.x)
            # leading-order tail int_{x_max}^inf, with f_1' frozen at its end value
            tail = -t.values[-1, 1:] / f1[-1]
            chi[:, 1:] = F - F[-1] - tail
    return DeformedProfile(t.x, t.values, t.derivatives, chi, _fprime(d, chi), fallback)


def essential_condition_residual(d: Deformation, t: Trajectory, pulled: DeformedProfile) -> np.ndarray:
    """Pointwise ``max_j min_pm |f_1' -/+ f_j'|`` along the profile."""
    fp = pulled.fprime
    if fp.shape[1] < 2:
        return np.zeros(fp.shape[0])
    f1 = fp[:, :1]
    rest = fp[:, 1:]
    res = np.minimum(np.abs(f1 - rest), np.abs(f1 + rest))
    return res.max(axis=1)


def _anchor_index(x: np.ndarray) -> int | None:
    k = int(np.argmin(np.abs(x)))
    return k if abs(x[k]) <= 1e-12 * max(1.0, abs(x[-1] - x[0])) else None


def deformed_superpotential_component(
    m: FieldModel,
    d: Deformation,
    orbit: OrbitConstraint | None,
    i: int,
    profile: DeformedProfile,
) -> np.ndarray:
    """Component ``i`` (0-based) of the deformed superpotential along the profile.

    The integrand ``W_{phi_i} / f_i' * dchi_i/dx`` is accumulated by Simpson's
    rule and shifted to vanish at ``x = 0`` (linear interpolation of the
    running integral if 0 is not a grid point).  If ``orbit`` is given the
    source fields must lie on it.
    """
    if orbit is not None:
        dev = float(np.max(np.abs(orbit(profile.phi))))
        if dev > ORBIT_TOL:
            raise DeformationError(f"trajectory leaves the orbit (max residual {dev:.3e})")
    fp = profile.fprime[:, i]
    if np.any(fp == 0):
        k = int(np.argmax(fp == 0))
        raise DeformationError(f"df{i + 1}/dchi{i + 1} vanishes at x = {profile.x[k]:g}")
    integrand = m.grad(profile.phi)[:, i] * profile.dphi_dx[:, i] / fp**2
    F, _ = cumulative_simpson(integrand, profile.x)
    k = _anchor_index(profile.x)
    zero = F[k] if k is not None else np.interp(0.0, profile.x, F)
    return F - zero


def deformed_superpotential(m: FieldModel, d: Deformation, orbit: OrbitConstraint | None, profile: DeformedProfile) -> np.ndarray:
    """All components, shape ``(len(x), N)``."""
    return np.stack([deformed_superpotential_component(m, d, orbit, i, profile) for i in range(d.n_fields)], axis=1)


def deformed_potential(
    m: FieldModel, d: Deformation, t: Trajectory, pulled: DeformedProfile, tol: float = ESSENTIAL_TOL
) -> np.ndarray:
    """``U(phi) / f_1'(chi_1)^2`` along ``t``; refuses if the essential condition fails."""
    worst = float(np.max(essential_condition_residual(d, t, pulled)))
    if worst > tol:
        raise EssentialConditionError(worst, tol)
    return m.potential(t.values) / pulled.fprime[:, 0] ** 2


class DeformedEnergy(NamedTuple):
    components: tuple[float, ...]
    total: float
    flat_tails: bool
    tail_variation: float


def deformed_bps_energy(profile: DeformedProfile, tail_tol: float = FLAT_TAIL_TOL) -> DeformedEnergy:
    """``W_def(x_max) - W_def(x_min)`` per component and summed.

    Tails count as flat when every component varies by at most ``tail_tol``
    over the outer tenth of the grid on each side.
    """
    W = profile.W_def
    if W is None:
        raise DeformationError("profile carries no deformed superpotential (use deform_trajectory)")
    W = np.asarray(W, float).reshape(profile.x.size, -1)
    k = max(2, W.shape[0] // 10)
    var = max(float(np.max(np.ptp(W[:k], axis=0))), float(np.max(np.ptp(W[-k:], axis=0))))
    comps = tuple(float(v) for v in W[-1] - W[0])
    return DeformedEnergy(comps, float(sum(comps)), var <= tail_tol, var)


def deform_trajectory(
    m: FieldModel,
    d: Deformation,
    t: Trajectory,
    orbit: OrbitConstraint | None = None,
    strategy: str | None = None,
    tol: float = ESSENTIAL_TOL,
) -> DeformedProfile:
    """Pull back, then attach every superpotential component and the potential."""
    prof = pull_back_fields(d, t, strategy)
    W = deformed_superpotential(m, d, orbit, prof)
    U = deformed_potential(m, d, t, prof, tol)
    return replace(prof, W_def=W, U_def=U)


@dataclass(frozen=True)
class TanClosedForm:
    """Exact profiles of the tan deformation of the hexagonal solution."""

    r: float
    theta: float

    def _ts(self, x):
        z = 2.0 * self.r * np.asarray(x, float)
        t = np.tanh(z)
        a = np.exp(-np.abs(z))
        return t, 2.0 * a / (1.0 + a * a)

    def chi(self, x) -> np.ndarray:
        t, s = self._ts(x)
        k = math.sqrt(1.0 / (2.0 * self.r) - 1.0)
        lump = k * np.arctanh(s / math.sqrt(2.0))
        return np.stack([np.arctan(t), lump * math.cos(self.theta), lump * math.sin(self.theta)], axis=-1)

    def common_derivative(self, x) -> np.ndarray:
        """``df_i/dchi_i`` shared by all three maps: ``1 + tanh^2(2 r x)``."""
        t, _ = self._ts(x)
        return 1.0 + t * t

    def W_def(self, x) -> np.ndarray:
        """Components: ``r tanh(4 r x)`` and ``(1-2r) c^2 (arctan t - t/(1+t^2))``."""
        t, _ = self._ts(x)
        r = self.r
        lump = (1.0 - 2.0 * r) * (np.arctan(t) - t / (1.0 + t * t))
        return np.stack(
            [r * np.tanh(4.0 * r * np.asarray(x, float)), lump * math.cos(self.theta) ** 2, lump * math.sin(self.theta) ** 2],
            axis=-1,
        )

    def U_def(self, x) -> np.ndarray:
        _, U = closed_profiles(HexParams(self.r, self.theta), x)
        return U / self.common_derivative(x) ** 2

    def gap(self, x) -> np.ndarray:
        """``2 U_def - d/dx (r tanh(4 r x))``: the lump components' share."""
        t, s = self._ts(x)
        r = self.r
        return 4.0 * r * (1.0 - 2.0 * r) * s * s * t * t / (1.0 + t * t) ** 2

    def profile(self, x) -> DeformedProfile:
        x = np.asarray(x, float)
        p = HexParams(self.r, self.theta)
        phi = analytic_solution(p, x)
        fp = np.repeat(self.common_derivative(x)[:, None], 3, axis=1)
        return DeformedProfile(x, phi, analytic_derivative(p, x), self.chi(x), fp, False, self.W_def(x), self.U_def(x))


class BuiltinDeformation(NamedTuple):
    deformation: Deformation
    closed: TanClosedForm


def builtin_tan_deformation(r: float, theta: float) -> BuiltinDeformation:
    """The tan deformation with lump maps matched to the hexagonal orbit.

    ``f_1 = tan(chi_1)``, ``f_2 = sqrt(2(1/r-2)) cos(theta) tanh(sec(theta) chi_2 / k)``
    and ``f_3`` likewise with ``sin``/``csc``, where ``k = sqrt(1/(2r) - 1)``.
    """
    r = _check_r(r)
    c, s = math.cos(theta), math.sin(theta)
    for name, val, fn in (("phi2", c, "sec"), ("phi3", s, "csc")):
        if abs(val) < 1e-12:
            raise DeformationError(
                f"theta={theta!r} makes {fn}(theta) singular, so the map for {name} is undefined"
            )
    amp = math.sqrt(2.0 * (1.0 / r - 2.0))
    k = math.sqrt(1.0 / (2.0 * r) - 1.0)
    maps = [
        parse("tan(chi1)"),
        substitute(parse("a*cos(th)*tanh(sec(th)*chi2/k)"), {"a": amp, "th": theta, "k": k}),
        substitute(parse("a*sin(th)*tanh(csc(th)*chi3/k)"), {"a": amp, "th": theta, "k": k}),
    ]
    # the lump maps saturate at +-amp*|cos|; keep their brackets where tanh is still resolvable
    w2, w3 = 8.0 * k * abs(c), 8.0 * k * abs(s)
    d = Deformation(tuple(maps), ("chi1", "chi2", "chi3"), ((-1.5, 1.5), (-w2, w2), (-w3, w3)))
    return BuiltinDeformation(d, TanClosedForm(r, float(theta)))
