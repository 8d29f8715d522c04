"""Two-scale exponential integrators for charged-particle dynamics in a strong magnetic field."""

from tsexp.phi import phi_scalar, rot2, rot3
from tsexp.taugrid import TauField, MultiplierSpec, average, linv, apply_multiplier, evaluate_at
from tsexp.problems import (
    Problem2D,
    Problem3D,
    builtin_2d,
    builtin_3d,
    get_problem,
    register_problem,
)
from tsexp.integrators import get_tableau, solve, step, check_order_conditions
from tsexp.reference import boris_solve, gauss4_solve, reference_solution

__all__ = [
    "phi_scalar",
    "rot2",
    "rot3",
    "TauField",
    "MultiplierSpec",
    "average",
    "linv",
    "apply_multiplier",
    "evaluate_at",
    "Problem2D",
    "Problem3D",
    "builtin_2d",
    "builtin_3d",
    "get_problem",
    "register_problem",
    "get_tableau",
    "solve",
    "step",
    "check_order_conditions",
    "boris_solve",
    "gauss4_solve",
    "reference_solution",
]

__version__ = "0.1.0"
