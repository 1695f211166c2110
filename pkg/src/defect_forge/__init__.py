"""Multi-field BPS defects from a superpotential, their orbit-based
deformations, and a numerical audit of the hexagonal-network closed forms."""

from .analytic import (
    HexParams,
    OrbitConstraint,
    analytic_derivative,
    analytic_solution,
    closed_profiles,
    hexagonal_model,
    hexagonal_orbit,
    hexagonal_vacua,
    orbit_residual,
    tail_length,
)
from .deform import (
    Deformation,
    DeformationError,
    DeformedProfile,
    EssentialConditionError,
    builtin_tan_deformation,
    deform_trajectory,
    deformed_bps_energy,
    deformed_potential,
    deformed_superpotential_component,
    essential_condition_residual,
    identity_deformation,
    make_deformation,
    pull_back_fields,
)
from .expr import Expr, differentiate, evaluate, invert_monotone, parse, render
from .model import FieldModel, Trajectory, Vacuum, build_model, eom_residual, find_vacua
from .report import AuditReport, bps_bound, bps_defect, consistency_audit, total_energy
from .solver import ShootingError, SolverError, integrate_bps, integrate_bps_two_sided, shoot_kink

__version__ = "0.1.0"


__all__ = [
    "HexParams",
    "OrbitConstraint",
    "analytic_derivative",
    "analytic_solution",
    "closed_profiles",
    "hexagonal_model",
    "hexagonal_orbit",
    "hexagonal_vacua",
    "orbit_residual",
    "tail_length",
    "Deformation",
    "DeformationError",
    "DeformedProfile",
    "EssentialConditionError",
    "builtin_tan_deformation",
    "deform_trajectory",
    "deformed_bps_energy",
    "deformed_potential",
    "deformed_superpotential_component",
    "essential_condition_residual",
    "identity_deformation",
    "make_deformation",
    "pull_back_fields",
    "Expr",
    "differentiate",
    "evaluate",
    "invert_monotone",
    "parse",
    "render",
    "FieldModel",
    "Trajectory",
    "Vacuum",
    "build_model",
    "eom_residual",
    "find_vacua",
    "AuditReport",
    "bps_bound",
    "bps_defect",
    "consistency_audit",
    "total_energy",
    "ShootingError",
    "SolverError",
    "integrate_bps",
    "integrate_bps_two_sided",
    "shoot_kink",
    "__version__",
]
