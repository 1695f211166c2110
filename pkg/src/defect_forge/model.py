"""Static multi-field models derived from a superpotential.

A :class:`FieldModel` owns the superpotential ``W`` and everything derived
from it by symbolic differentiation: the gradient ``W_i``, the Hessian
``W_ij``, the potential ``U = 1/2 sum_i W_i^2`` and its gradient ``dU/dphi_i``.
All derived quantities are compiled once and can be sampled on scalar points
or whole grids.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import (
    Const,
    Expr,
    ExprError,
    _add,
    _mul,
    _power,
    compile_expr,
    differentiate,
    free_variables,
    parse,
)

__all__ = [
    "FieldModel",
    "Vacuum",
    "Trajectory",
    "ModelError",
    "build_model",
    "classify_vacuum",
    "find_vacua",
    "eom_residual",
    "second_derivative",
    "VACUUM_TOL",
    "DEDUP_RADIUS",
    "DEGENERATE_EIG",
]

VACUUM_TOL = 1e-10
DEDUP_RADIUS = 1e-6
DEGENERATE_EIG = 1e-8


class ModelError(ValueError):
    """Invalid model definition or trajectory."""


@dataclass(frozen=True, eq=False)
class FieldModel:
    """Superpotential model over an ordered list of fields.

    Use :func:`build_model` rather than the constructor.
    """

    fields: tuple[str, ...]
    W: Expr
    params: Mapping[str, float]
    gradient: tuple[Expr, ...] = field(repr=False)
    hessian: tuple[tuple[Expr, ...], ...] = field(repr=False)
    U: Expr = field(repr=False)
    dU: tuple[Expr, ...] = field(repr=False)

    def __post_init__(self):
        args = list(self.fields)
        p = dict(self.params)
        flat_hessian = [h for row in self.hessian for h in row]
        object.__setattr__(self, "_W", compile_expr(self.W, args, p))
        object.__setattr__(self, "_grad", compile_expr(self.gradient, args, p))
        object.__setattr__(self, "_hess", compile_expr(flat_hessian, args, p))
        object.__setattr__(self, "_U", compile_expr(self.U, args, p))
        object.__setattr__(self, "_dU", compile_expr(self.dU, args, p))

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    # Every sampler accepts ``phi`` of shape (N,) or (..., N).

    def _columns(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape[-1] != self.n_fields:
            raise ModelError(f"expected {self.n_fields} field values, got shape {phi.shape}")
        if phi.ndim == 1:
            return [float(v) for v in phi], ()
        return [phi[..., k] for k in range(self.n_fields)], phi.shape[:-1]

    @staticmethod
    def _stack(values, shape):
        if not shape:
            return np.array([float(v) for v in values])
        return np.stack([np.broadcast_to(np.asarray(v, float), shape) for v in values], axis=-1)

    def superpotential(self, phi) -> float | np.ndarray:
        cols, shape = self._columns(phi)
        v = self._W(*cols)
        return float(v) if not shape else np.broadcast_to(np.asarray(v, float), shape).copy()

    def grad(self, phi) -> np.ndarray:
        cols, shape = self._columns(phi)
        return self._stack(self._grad(*cols), shape)

    def grad_fast(self, phi: Sequence[float]) -> tuple:
        """Gradient at a single point as a tuple (no validation)."""
        return self._grad(*phi)

    def hess(self, phi) -> np.ndarray:
        cols, shape = self._columns(phi)
        n = self.n_fields
        flat = self._stack(self._hess(*cols), shape)
        return flat.reshape(shape + (n, n))

    def potential(self, phi) -> float | np.ndarray:
        cols, shape = self._columns(phi)
        v = self._U(*cols)
        return float(v) if not shape else np.broadcast_to(np.asarray(v, float), shape).copy()

    def potential_grad(self, phi) -> np.ndarray:
        cols, shape = self._columns(phi)
        return self._stack(self._dU(*cols), shape)


def build_model(
    fields: Sequence[str],
    W: str | Expr,
    params: Mapping[str, float] | None = None,
) -> FieldModel:
    """Build a :class:`FieldModel` from superpotential text (or a tree).

    Every free symbol of ``W`` must be one of ``fields`` or a key of
    ``params``.  Gradient, Hessian and potential are derived symbolically;
    ``U`` is assembled as ``1/2 sum W_i^2`` and never entered by hand.
    """
    fields = tuple(fields)
    if not fields:
        raise ModelError("a model needs at least one field")
    if len(set(fields)) != len(fields):
        raise ModelError(f"duplicate field names in {fields}")
    params = {k: float(v) for k, v in (params or {}).items()}
    clash = set(fields) & set(params)
    if clash:
        raise ModelError(f"names used both as field and parameter: {sorted(clash)}")
    tree = parse(W) if isinstance(W, str) else W
    unbound = free_variables(tree) - set(fields) - set(params)
    if unbound:
        raise ModelError(f"unbound symbol(s) in superpotential: {', '.join(sorted(unbound))}")

    gradient = tuple(differentiate(tree, f) for f in fields)
    hessian = tuple(tuple(differentiate(g, f) for f in fields) for g in gradient)
    U: Expr = Const(0.0)
    for g in gradient:
        U = _add(U, _power(g, Const(2.0)))
    U = _mul(Const(0.5), U)
    dU = tuple(differentiate(U, f) for f in fields)
    try:
        return FieldModel(fields, tree, params, gradient, hessian, U, dU)
    except ExprError as exc:
        raise ModelError(str(exc)) from exc


# ---------------------------------------------------------------------------
# vacua


@dataclass(frozen=True)
class Vacuum:
    point: tuple[float, ...]
    grad_norm: float
    eigenvalues: tuple[float, ...]
    classification: str  # "isolated" | "degenerate"

    @property
    def degenerate(self) -> bool:
        return self.classification == "degenerate"


def classify_vacuum(m: FieldModel, point: Sequence[float]) -> Vacuum:
    """Wrap a critical point of ``W`` with its Hessian spectrum."""
    p = np.asarray(point, dtype=float)
    g = np.linalg.norm(m.grad(p))
    eig = np.linalg.eigvalsh(m.hess(p))
    kind = "degenerate" if np.any(np.abs(eig) <= DEGENERATE_EIG) else "isolated"
    return Vacuum(tuple(float(v) for v in p), float(g), tuple(float(v) for v in eig), kind)


def _polish(m: FieldModel, x, g, gn, steps: int = 3):
    for _ in range(steps):
        step, *_ = np.linalg.lstsq(m.hess(x), -g, rcond=1e-12)
        trial = x + step
        gt = m.grad(trial)
        gtn = np.linalg.norm(gt)
        if not gtn < gn:
            break
        x, g, gn = trial, gt, gtn
    return x


def _newton(m: FieldModel, x0: np.ndarray, max_iter: int = 100) -> np.ndarray | None:
    x = x0.copy()
    g = m.grad(x)
    gn = np.linalg.norm(g)
    for _ in range(max_iter):
        if not np.isfinite(gn):
            return None
        if gn <= VACUUM_TOL:
            return _polish(m, x, g, gn)
        J = m.hess(x)
        step, *_ = np.linalg.lstsq(J, -g, rcond=1e-12)
        improved = False
        if np.all(np.isfinite(step)) and np.linalg.norm(step) > 0:
            t = 1.0
            for _ in range(30):
                trial = x + t * step
                gt = m.grad(trial)
                gtn = np.linalg.norm(gt)
                if np.isfinite(gtn) and gtn < gn:
                    x, g, gn, improved = trial, gt, gtn, True
                    break
                t *= 0.5
        if not improved:
            # damped gradient step on 1/2 |grad W|^2
            descent = -J.T @ g
            if not np.all(np.isfinite(descent)) or not np.any(descent):
                return None
            t = 1.0
            for _ in range(60):
                trial = x + t * descent
                gt = m.grad(trial)
                gtn = np.linalg.norm(gt)
                if np.isfinite(gtn) and gtn < gn:
                    x, g, gn, improved = trial, gt, gtn, True
                    break
                t *= 0.5
            if not improved:
                return None
    return _polish(m, x, g, gn) if gn <= VACUUM_TOL else None


def find_vacua(
    m: FieldModel,
    box: Sequence[tuple[float, float]],
    seeds_per_axis: int = 5,
) -> list[Vacuum]:
    """Locate critical points of ``W`` inside ``box`` by multi-start Newton.

    Seeds form a regular grid with ``seeds_per_axis`` points per field.
    Converged points are sorted, merged when closer than ``DEDUP_RADIUS``
    and classified from the Hessian eigenvalues.  Points that converge
    outside the box are discarded.
    """
    if len(box) != m.n_fields:
        raise ModelError(f"box needs {m.n_fields} intervals, got {len(box)}")
    if seeds_per_axis < 2:
        raise ModelError("seeds_per_axis must be at least 2")
    lows = np.array([b[0] for b in box], float)
    highs = np.array([b[1] for b in box], float)
    if not (np.all(np.isfinite(lows)) and np.all(np.isfinite(highs)) and np.all(lows < highs)):
        raise ModelError("box must be finite with lo < hi on every axis")
    axes = [np.linspace(lo, hi, seeds_per_axis) for lo, hi in zip(lows, highs)]
    found = []
    for seed in itertools.product(*axes):
        x = _newton(m, np.array(seed))
        if x is None:
            continue
        pad = 1e-9 * (highs - lows)
        if np.all(x >= lows - pad) and np.all(x <= highs + pad):
            found.append(np.where(np.abs(x) < 1e-14, 0.0, x))
    found.sort(key=lambda p: tuple(np.round(p, 8)))
    unique: list[np.ndarray] = []
    for p in found:
        if all(np.linalg.norm(p - q) > DEDUP_RADIUS for q in unique):
            unique.append(p)
    return [classify_vacuum(m, p) for p in unique]


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A sampled static configuration.

    ``values`` and ``derivatives`` have shape ``(len(x), n_fields)``.  For
    solver output the derivative column is the flow right-hand side at the
    stored fields; for hand-built trajectories it is whatever the caller
    supplied (or a finite-difference estimate).
    """

    x: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    fields: tuple[str, ...]

    def __post_init__(self):
        x = np.asarray(self.x, float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", np.asarray(self.values, float))
        object.__setattr__(self, "derivatives", np.asarray(self.derivatives, float))
        object.__setattr__(self, "fields", tuple(self.fields))
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ModelError("trajectory grid must be strictly increasing with at least 2 points")
        for name in ("values", "derivatives"):
            a = getattr(self, name)
            if a.shape != (x.size, len(self.fields)):
                raise ModelError(f"{name} has shape {a.shape}, expected {(x.size, len(self.fields))}")

    @classmethod
    def from_samples(cls, x, values, fields: Sequence[str], derivatives=None) -> "Trajectory":
        x = np.asarray(x, float)
        values = np.asarray(values, float).reshape(x.size, -1)
        if derivatives is None:
            derivatives = np.gradient(values, x, axis=0, edge_order=2)
        return cls(x, values, np.asarray(derivatives, float).reshape(values.shape), tuple(fields))

    @classmethod
    def bps(cls, m: FieldModel, x, values) -> "Trajectory":
        """Trajectory whose derivative column is the flow ``grad W``."""
        values = np.asarray(values, float).reshape(np.size(x), -1)
        return cls(np.asarray(x, float), values, m.grad(values), m.fields)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.fields.index(name)]

    @property
    def uniform(self) -> bool:
        h = np.diff(self.x)
        return bool(np.allclose(h, h[0], rtol=1e-9, atol=0.0))


def _divided(x: np.ndarray, y: np.ndarray, k: int):
    """Second and third divided differences over ``x[k:k+4]``."""
    d1 = [(y[k + i + 1] - y[k + i]) / (x[k + i + 1] - x[k + i]) for i in range(3)]
    d2 = [(d1[i + 1] - d1[i]) / (x[k + i + 2] - x[k + i]) for i in range(2)]
    d3 = (d2[1] - d2[0]) / (x[k + 3] - x[k])
    return d2, d3


def second_derivative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second derivative on a monotone (possibly uneven) grid.

    Interior points use the centred three-point stencil.  The two edge
    points use the one-sided four-point stencil, which keeps the edges
    second-order accurate like the interior.  Written with divided
    differences so constant data gives exactly zero.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = x.size
    if n < 4:
        raise ModelError("need at least 4 points for a second derivative")
    ax = (slice(None),) + (None,) * (y.ndim - 1)
    s_lo = (y[1:-1] - y[:-2]) / (x[1:-1] - x[:-2])[ax]
    s_hi = (y[2:] - y[1:-1]) / (x[2:] - x[1:-1])[ax]
    out = np.empty_like(y)
    out[1:-1] = 2.0 * (s_hi - s_lo) / (x[2:] - x[:-2])[ax]
    # cubic through the first / last four points, differentiated twice at the end point
    (a, _), c = _divided(x, y, 0)
    out[0] = 2.0 * a + 2.0 * c * ((x[0] - x[1]) + (x[0] - x[2]))
    (_, b), c = _divided(x, y, n - 4)
    out[-1] = 2.0 * b + 2.0 * c * ((x[-1] - x[-2]) + (x[-1] - x[-3]))
    return out


def eom_residual(m: FieldModel, t: Trajectory) -> tuple[np.ndarray, float]:
    """Residual ``R_i(x) = phi_i'' - dU/dphi_i`` of the static field equations.

    Returns the residual array ``(len(x), N)`` and its max-abs value.
    """
    if t.x.size < 5:
        raise ModelError("eom_residual needs at least 5 grid points")
    if np.any(np.diff(t.x) <= 0):
        raise ModelError("grid must be strictly increasing")
    d2 = second_derivative(t.x, t.values)
    R = d2 - m.potential_grad(t.values)
    return R, float(np.max(np.abs(R)))
