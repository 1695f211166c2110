"""Closed forms for the three-field hexagonal-network model.

The superpotential is ``W = phi1 - phi1^3/3 - r phi1 (phi2^2 + phi3^2)``
with coupling ``0 < r < 1/2``.  On the elliptical orbit

    phi1^2 + (phi2^2 + phi3^2) / (1/r - 2) = 1

the first-order flow integrates to a kink in ``phi1`` and two lumps in
``phi2``, ``phi3`` whose relative weight is set by the phase ``theta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expr import Expr, compile_expr, parse, substitute
from .model import FieldModel, Vacuum, build_model, classify_vacuum

__all__ = [
    "HEXAGONAL_W",
    "HEX_FIELDS",
    "HexParams",
    "OrbitConstraint",
    "hexagonal_model",
    "hexagonal_orbit",
    "hexagonal_vacua",
    "analytic_solution",
    "analytic_derivative",
    "orbit_residual",
    "closed_profiles",
    "tail_length",
]

HEXAGONAL_W = "phi1 - phi1^3/3 - r*phi1*(phi2^2 + phi3^2)"
HEX_FIELDS = ("phi1", "phi2", "phi3")


def _check_r(r: float) -> float:
    r = float(r)
    if not (0.0 < r < 0.5):
        raise ValueError(f"coupling r={r!r} violates 0 < r < 1/2 (orbit amplitude sqrt(1/r - 2) must be real and nonzero)")
    return r


@dataclass(frozen=True)
class HexParams:
    """Parameters of the orbit solution.

    ``theta`` is in radians.  ``sign_1`` picks kink (+1) or antikink (-1);
    ``sign_23`` flips the orientation of both lumps.
    """

    r: float
    theta: float = math.pi / 4
    sign_1: int = 1
    sign_23: int = 1

    def __post_init__(self):
        _check_r(self.r)
        if self.sign_1 not in (1, -1) or self.sign_23 not in (1, -1):
            raise ValueError("branch signs must be +1 or -1")

    @property
    def amplitude(self) -> float:
        """Orbit semi-axis ``sqrt(1/r - 2)`` of the lump directions."""
        return math.sqrt(1.0 / self.r - 2.0)


@dataclass(frozen=True)
class OrbitConstraint:
    """An orbit ``C(phi) = 0`` in field space, held as an expression."""

    residual: Expr
    fields: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_f", compile_expr(self.residual, list(self.fields)))

    def __call__(self, phi) -> float | np.ndarray:
        f = self._f
        phi = np.asarray(phi, float)
        if phi.ndim == 1:
            return float(f(*phi))
        return np.asarray(f(*(phi[..., k] for k in range(len(self.fields)))), float)


def hexagonal_model(r: float) -> FieldModel:
    """The hexagonal-network model at coupling ``r``."""
    return build_model(HEX_FIELDS, HEXAGONAL_W, {"r": _check_r(r)})


def hexagonal_orbit(r: float) -> OrbitConstraint:
    r = _check_r(r)
    text = "phi1^2 + (phi2^2 + phi3^2)/a2 - 1"
    return OrbitConstraint(substitute(parse(text), {"a2": 1.0 / r - 2.0}), HEX_FIELDS)


def hexagonal_vacua(m: FieldModel) -> tuple[Vacuum, Vacuum]:
    """The two isolated vacua ``(-1, 0, 0)`` and ``(1, 0, 0)``."""
    return classify_vacuum(m, (-1.0, 0.0, 0.0)), classify_vacuum(m, (1.0, 0.0, 0.0))


def tail_length(r: float) -> float:
    """Half-width ``L`` with ``sech^2(2 r L) < 1e-20``."""
    return 12.0 / _check_r(r)


def _sech(z):
    a = np.exp(-np.abs(z))
    return 2.0 * a / (1.0 + a * a)


def analytic_solution(p: HexParams, x) -> np.ndarray:
    """Fields ``(phi1, phi2, phi3)`` at ``x`` (scalar or array).

    Returns shape ``(3,)`` for scalar ``x`` and ``(len(x), 3)`` otherwise.
    """
    x = np.asarray(x, float)
    z = 2.0 * p.r * x
    s = _sech(z)
    lump = p.sign_23 * p.amplitude * s
    out = np.stack([p.sign_1 * np.tanh(z), lump * math.cos(p.theta), lump * math.sin(p.theta)], axis=-1)
    return out


def analytic_derivative(p: HexParams, x) -> np.ndarray:
    """Exact ``d phi_i / dx`` of :func:`analytic_solution`."""
    x = np.asarray(x, float)
    z = 2.0 * p.r * x
    s = _sech(z)
    t = np.tanh(z)
    k = 2.0 * p.r
    dlump = -p.sign_23 * p.amplitude * k * s * t
    return np.stack([p.sign_1 * k * s * s, dlump * math.cos(p.theta), dlump * math.sin(p.theta)], axis=-1)


def orbit_residual(p: HexParams, fields) -> float | np.ndarray:
    """``phi1^2 + (phi2^2 + phi3^2)/(1/r - 2) - 1``; zero on the orbit."""
    f = np.asarray(fields, float)
    return f[..., 0] ** 2 + (f[..., 1] ** 2 + f[..., 2] ** 2) / (1.0 / p.r - 2.0) - 1.0


def closed_profiles(p: HexParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Superpotential and potential along the orbit solution as functions of x."""
    x = np.asarray(x, float)
    z = 2.0 * p.r * x
    s2 = _sech(z) ** 2
    t = np.tanh(z)
    r = p.r
    W = p.sign_1 * (2.0 / 3.0) * t * (1.0 + (3.0 * r - 1.0) * s2)
    U = 2.0 * r * s2 * ((3.0 * r - 1.0) * s2 + 1.0 - 2.0 * r)
    return W, U
