from .equilibrium import EquilibriumShift, find_equilibrium, shift_equilibrium
from .lmi import Pencil, build_lmi, neutral_directions, smat, svec, trajectory_maps
from .lyapunov import (LyapunovEvaluator, ValidationReport, adaptive_simpson, channel_integral, integral_bounds,
                       validate_certificate)
from .solver import (Certificate, ConicProblem, ConicSolver, ScsSolver, SolverOptions, check_variables,
                     conic_problem, solve_feasibility)

__all__ = [
    "EquilibriumShift", "find_equilibrium", "shift_equilibrium",
    "Pencil", "build_lmi", "neutral_directions", "smat", "svec", "trajectory_maps",
    "LyapunovEvaluator", "ValidationReport", "adaptive_simpson", "channel_integral", "integral_bounds",
    "validate_certificate",
    "Certificate", "ConicProblem", "ConicSolver", "ScsSolver", "SolverOptions", "check_variables",
    "conic_problem", "solve_feasibility",
]
