"""Command-line front end.

Subcommands: ``solve``, ``deform``, ``audit``, ``sweep`` and ``vacua``.
Exit status is 0 on success, 1 for invalid input, 2 for a numerical
failure and 3 when an audit check fails.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .analytic import hexagonal_model, hexagonal_orbit, hexagonal_vacua, tail_length
from .deform import (
    DeformationError,
    builtin_tan_deformation,
    deform_trajectory,
    deformed_bps_energy,
    identity_deformation,
    make_deformation,
)
from .expr import ExprError
from .model import FieldModel, ModelError, Vacuum, build_model, find_vacua
from .report import bps_bound, consistency_audit, default_audit_grid, total_energy, worker_count
from .solver import SolverError, shoot_kink

__all__ = ["RunConfig", "ValidationError", "run_command", "main", "write_csv", "CSV_HEADER"]

CSV_HEADER = "x,phi1,phi2,phi3,chi1,chi2,chi3,W,U,Wdef1,Udef,energy_density"


class ValidationError(ValueError):
    """Bad user input (exit status 1)."""


@dataclass
class RunConfig:
    model: str = "hexagonal"
    W: str | None = None
    fields: list[str] | None = None
    params: dict[str, float] = field(default_factory=dict)
    r: float = 0.25
    theta_deg: float = 45.0
    x_min: float | None = None
    x_max: float | None = None
    points: int | None = None
    tol: float = 1e-10
    audit_tols: dict[str, float] = field(default_factory=dict)
    deformation: str | None = None
    maps: list[str] | None = None
    brackets: list[list[float]] | None = None
    r_values: list[float] | None = None
    box: list[float] | None = None
    seeds_per_axis: int = 5
    out: str | None = None
    report: str | None = None

    @property
    def theta(self) -> float:
        return math.radians(self.theta_deg)

    def validate(self, command: str) -> None:
        if self.deformation is None:
            self.deformation = "tan" if self.model == "hexagonal" else "identity"
        if self.model not in ("hexagonal", "custom"):
            raise ValidationError(f"model: expected 'hexagonal' or 'custom', got {self.model!r}")
        if self.model == "hexagonal" or command in ("audit",):
            _check_r(self.r, "r")
        if self.model == "custom":
            if not self.W:
                raise ValidationError("W: a custom model needs a superpotential text")
            if not self.fields:
                raise ValidationError("fields: a custom model needs its field names")
        if self.points is not None and (self.points < 501 or self.points % 2 == 0):
            raise ValidationError(f"points: need an odd count >= 501 for Simpson quadrature, got {self.points}")
        lo, hi = self.x_min, self.x_max
        if (lo is not None and lo >= 0) or (hi is not None and hi <= 0):
            raise ValidationError(f"x_min/x_max: need x_min < 0 < x_max, got [{lo}, {hi}]")
        if not 1e-12 <= self.tol <= 1e-4:
            raise ValidationError(f"tol: must lie in [1e-12, 1e-4], got {self.tol}")
        if self.deformation not in ("tan", "identity", "custom"):
            raise ValidationError(f"deformation: expected tan, identity or custom, got {self.deformation!r}")
        if self.deformation == "custom" and not self.maps:
            raise ValidationError("maps: a custom deformation needs one map text per field")
        if self.deformation == "tan" and self.model != "hexagonal":
            raise ValidationError("deformation: the tan deformation is tied to the hexagonal model")
        if command == "sweep":
            if not self.r_values:
                raise ValidationError("r_values: the sweep range is empty")
            for v in self.r_values:
                _check_r(v, "r_values")

    def echo(self) -> list[str]:
        d = dataclasses.asdict(self)
        return [f"# {k} = {json.dumps(d[k], sort_keys=True)}" for k in sorted(d)]


def _check_r(r: float, name: str) -> None:
    if not (isinstance(r, (int, float)) and 0.0 < r < 0.5):
        raise ValidationError(f"{name}: r={r!r} violates the condition 0 < r < 1/2")


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def load_config(path: str) -> dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config: top level must be an object")
    for k, v in raw.items():
        if k not in _FIELD_TYPES:
            raise ValidationError(f"{k}: unknown config field")
        _check_type(k, v)
    return raw


def _check_type(k: str, v: Any) -> None:
    if v is None:
        return
    num = (int, float)
    expect = {
        "model": str, "W": str, "deformation": str, "out": str, "report": str,
        "r": num, "theta_deg": num, "x_min": num, "x_max": num, "tol": num,
        "points": int, "seeds_per_axis": int,
        "fields": list, "maps": list, "brackets": list, "r_values": list, "box": list,
        "params": dict, "audit_tols": dict,
    }[k]
    if isinstance(v, bool) or not isinstance(v, expect):
        raise ValidationError(f"{k}: wrong type {type(v).__name__}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _params(text: str) -> dict[str, float]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, sep, val = item.partition("=")
        try:
            out[name.strip()] = float(val)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected name=value pairs, got {item!r}") from None
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=value pairs, got {item!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="defect-forge", description="BPS defects, deformations and their audit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--model", choices=["hexagonal", "custom"])
    common.add_argument("--W", dest="W", help="superpotential text for --model custom")
    common.add_argument("--fields", type=lambda s: [f.strip() for f in s.split(",") if f.strip()])
    common.add_argument("--params", type=_params, help="model parameters, e.g. a=1,b=2")
    common.add_argument("--r", type=float)
    common.add_argument("--theta-deg", dest="theta_deg", type=float)
    common.add_argument("--xmin", dest="x_min", type=float)
    common.add_argument("--xmax", dest="x_max", type=float)
    common.add_argument("--points", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--deformation", choices=["tan", "identity", "custom"])
    common.add_argument("--maps", type=lambda s: [f.strip() for f in s.split(";")], help="f_i texts separated by ';'")
    common.add_argument("--out")
    common.add_argument("--report")
    for name, help_ in (
        ("solve", "shoot the kink, deform it, write plot data"),
        ("deform", "as solve, and summarize the deformed energies"),
        ("audit", "run the consistency audit"),
        ("sweep", "audit summary over several r"),
        ("vacua", "list critical points of W"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "sweep":
            sp.add_argument("--r-values", dest="r_values", type=_floats)
        if name == "vacua":
            sp.add_argument("--box", type=_floats, help="lo,hi applied to every field")
            sp.add_argument("--seeds-per-axis", dest="seeds_per_axis", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, Any] = {}
    if args.config:
        values.update(load_config(args.config))
    for k, v in vars(args).items():
        if k in _FIELD_TYPES and v is not None:
            values[k] = v
    cfg = RunConfig(**values)
    cfg.validate(args.command)
    return cfg


# ---------------------------------------------------------------------------
# pipelines


def _model(cfg: RunConfig) -> FieldModel:
    if cfg.model == "hexagonal":
        return hexagonal_model(cfg.r)
    try:
        return build_model(cfg.fields, cfg.W, cfg.params)
    except ExprError as exc:
        raise ValidationError(f"W: {exc}") from None


def _grid(cfg: RunConfig, default: tuple[float, float, int]) -> np.ndarray:
    lo = default[0] if cfg.x_min is None else cfg.x_min
    hi = default[1] if cfg.x_max is None else cfg.x_max
    n = default[2] if cfg.points is None else cfg.points
    return np.linspace(lo, hi, n)


def _extended(grid: np.ndarray, reach: float) -> tuple[np.ndarray, slice]:
    """Same lattice as ``grid`` extended to cover ``[-reach, reach]``."""
    h = grid[1] - grid[0]
    left = max(0, math.ceil((grid[0] + reach) / h - 1e-9))
    right = max(0, math.ceil((reach - grid[-1]) / h - 1e-9))
    n = grid.size
    ext = np.concatenate([grid[0] - h * np.arange(left, 0, -1), grid, grid[-1] + h * np.arange(1, right + 1)])
    return ext, slice(left, left + n)


def _endpoints(m: FieldModel, cfg: RunConfig) -> tuple[Vacuum, Vacuum]:
    if cfg.model == "hexagonal":
        return hexagonal_vacua(m)
    lo, hi = (cfg.box or [-3.0, 3.0])[:2]
    found = [v for v in find_vacua(m, [(lo, hi)] * m.n_fields, cfg.seeds_per_axis) if not v.degenerate]
    if len(found) < 2:
        raise SolverError("fewer than two isolated vacua in the search box")
    found.sort(key=lambda v: m.superpotential(np.asarray(v.point)))
    return found[0], found[-1]


def _deformation(cfg: RunConfig, m: FieldModel):
    n = m.n_fields
    if cfg.deformation == "tan":
        return builtin_tan_deformation(cfg.r, cfg.theta).deformation
    if cfg.deformation == "identity":
        return identity_deformation(n)
    if len(cfg.maps) != n:
        raise ValidationError(f"maps: need {n} map texts, got {len(cfg.maps)}")
    try:
        return make_deformation(cfg.maps, cfg.brackets, params=cfg.params)
    except (DeformationError, ExprError) as exc:
        raise ValidationError(f"maps: {exc}") from None


def solve_profiles(cfg: RunConfig) -> dict[str, Any]:
    """Shoot, deform and collect every CSV column on the requested grid."""
    m = _model(cfg)
    grid = _grid(cfg, (-10.0, 10.0, 2001))
    hex_model = cfg.model == "hexagonal"
    ext, keep = _extended(grid, tail_length(cfg.r)) if hex_model else (grid, slice(None))
    a, b = _endpoints(m, cfg)
    seed = (0.0, math.cos(cfg.theta), math.sin(cfg.theta)) if hex_model else None
    orbit = hexagonal_orbit(cfg.r) if hex_model else None
    t = shoot_kink(m, a, b, tol=cfg.tol, seed=seed, orbit=orbit, grid=ext)
    d = _deformation(cfg, m)
    prof = deform_trajectory(m, d, t, orbit=orbit)
    energy = total_energy(m, t)
    return {
        "model": m,
        "trajectory": t,
        "profile": prof,
        "keep": keep,
        "energy": energy,
        "deformed_energy": deformed_bps_energy(prof),
        "E_BPS": bps_bound(m, a, b),
    }


def _fmt(v: float) -> str:
    return "%.17g" % (v + 0.0)


def write_csv(path: str, header: str, columns: Sequence[np.ndarray], comments: Sequence[str] = ()) -> None:
    cols = [np.asarray(c, float) for c in columns]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("columns are not aligned")
    lines = list(comments) + [header]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise ValidationError(f"out: cannot write {path}: {exc.strerror}") from None


def _profile_columns(res: dict[str, Any]) -> tuple[str, list[np.ndarray]]:
    m, t, prof, k = res["model"], res["trajectory"], res["profile"], res["keep"]
    n = m.n_fields
    phi = t.values[k]
    chi = prof.chi[k]
    cols = [t.x[k]] + [phi[:, i] for i in range(n)] + [chi[:, i] for i in range(n)]
    cols += [m.superpotential(phi), m.potential(phi), prof.W_def[k, 0], prof.U_def[k], res["energy"].density[k]]
    if n == 3:
        header = CSV_HEADER
    else:
        names = [f"phi{i + 1}" for i in range(n)] + [f"chi{i + 1}" for i in range(n)]
        header = ",".join(["x"] + names + ["W", "U", "Wdef1", "Udef", "energy_density"])
    return header, cols


def _cmd_solve(cfg: RunConfig, summarize: bool) -> int:
    res = solve_profiles(cfg)
    header, cols = _profile_columns(res)
    out = cfg.out or "fields.csv"
    write_csv(out, header, cols, cfg.echo())
    if summarize:
        de = res["deformed_energy"]
        summary = {
            "E": res["energy"].energy,
            "E_BPS": res["E_BPS"],
            "delta_Wdef": list(de.components),
            "delta_Wdef_total": de.total,
            "flat_tails": de.flat_tails,
        }
        text = json.dumps(summary, indent=2) + "\n"
        if cfg.report:
            Path(cfg.report).write_text(text, encoding="utf-8")
        sys.stdout.write(text)
    return 0


def _audit_grid(cfg: RunConfig, r: float) -> np.ndarray:
    d = default_audit_grid(r)
    return _grid(cfg, (d[0], d[-1], d.size))


def _cmd_audit(cfg: RunConfig) -> int:
    deformation = "identity" if cfg.deformation == "identity" else "tan"
    rep = consistency_audit(cfg.r, cfg.theta, _audit_grid(cfg, cfg.r), deformation, cfg.audit_tols, cfg.tol)
    rep = dataclasses.replace(rep, theta_deg=float(cfg.theta_deg))
    text = rep.to_json()
    if cfg.report:
        Path(cfg.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for c in rep.checks:
        sys.stderr.write(f"{c.verdict:>21}  {c.name}  max={c.max_abs:.3e} tol={c.tol:.0e}\n")
    return 3 if rep.failed else 0


def _cmd_sweep(cfg: RunConfig) -> int:
    rs = sorted(cfg.r_values)

    def one(r):
        return consistency_audit(r, cfg.theta, _audit_grid(cfg, r), "tan", cfg.audit_tols, cfg.tol)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        reps = list(pool.map(one, rs))
    cols = [[], [], [], [], []]
    for r, rep in zip(rs, reps):
        worst = max(c.max_abs for c in rep.checks if c.verdict != "discrepancy-expected")
        for col, v in zip(cols, (r, rep.extras["E"], rep.extras["E_BPS"], rep.extras["delta_Wdef1"], worst)):
            col.append(v)
    write_csv(cfg.out or "sweep.csv", "r,E,E_BPS,dWdef1,max_audit_residual", cols, cfg.echo())
    return 3 if any(rep.failed for rep in reps) else 0


def _cmd_vacua(cfg: RunConfig) -> int:
    m = _model(cfg)
    if cfg.box:
        if len(cfg.box) != 2 or not cfg.box[0] < cfg.box[1]:
            raise ValidationError("box: expected lo,hi with lo < hi")
        lo, hi = cfg.box
    else:
        reach = 1.0 / math.sqrt(cfg.r) + 1.0 if cfg.model == "hexagonal" else 3.0
        lo, hi = -reach, reach
    if cfg.seeds_per_axis < 2:
        raise ValidationError("seeds_per_axis: need at least 2")
    vacua = find_vacua(m, [(lo, hi)] * m.n_fields, cfg.seeds_per_axis)
    n = m.n_fields
    header = ",".join(list(m.fields) + ["W", "grad_norm"] + [f"eig{i + 1}" for i in range(n)] + ["classification"])
    lines = cfg.echo() + [header]
    for v in vacua:
        p = np.asarray(v.point)
        vals = list(p) + [m.superpotential(p), v.grad_norm] + list(v.eigenvalues)
        lines.append(",".join(_fmt(x) for x in vals) + "," + v.classification)
    text = "\n".join(lines) + "\n"
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def run_command(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if args.command in ("solve", "deform"):
            return _cmd_solve(cfg, args.command == "deform")
        if args.command == "audit":
            return _cmd_audit(cfg)
        if args.command == "sweep":
            return _cmd_sweep(cfg)
        return _cmd_vacua(cfg)
    except (ValidationError, ModelError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (SolverError, DeformationError, ExprError, ArithmeticError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run_command())
