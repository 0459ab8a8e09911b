"""Dense QP/LP backend: active-set QP with a compiled core, tableau simplex."""

from .backend import BACKEND_NAME, available_backends
from .simplex import LpResult, feasible_point, solve_lp
from .solver import ActiveSetSolver, QpSolution, QuadProgram, kkt_check, solve_qp

__all__ = [
    "ActiveSetSolver",
    "BACKEND_NAME",
    "LpResult",
    "QpSolution",
    "QuadProgram",
    "available_backends",
    "feasible_point",
    "kkt_check",
    "solve_lp",
    "solve_qp",
]
