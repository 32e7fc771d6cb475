"""
plapsolve: constrained minimization for the p-Laplacian eigenvalue problem

    Delta_p u + a(x) u^(p-1) = lambda f(u, x)

on periodic lattices, with a subcritical solver, a continuation scheme for
critical growth, an expression language for ``a`` and ``f``, and empirical
checks of the inequalities behind the method.
"""

__version__ = "0.1.0"

from .mesh import Mesh, MeshError, build_torus, divergence, gradient, integrate  # noqa: E402
from .expr import Nonlinearity, parse, evaluate  # noqa: E402
from .functional import ProblemSpec, eval_B, eval_I, grad_B, grad_I, weak_residual  # noqa: E402
from .optimizer import (  # noqa: E402
    SolveResult,
    SolverOptions,
    brute_force_minimize,
    extract_lambda,
    project_to_constraint,
    solve_subcritical,
)
from .continuation import make_fm, compute_nu, compute_Rm, run_continuation  # noqa: E402

__all__ = [
    "__version__",
    "Mesh",
    "MeshError",
    "build_torus",
    "gradient",
    "divergence",
    "integrate",
    "Nonlinearity",
    "parse",
    "evaluate",
    "ProblemSpec",
    "eval_B",
    "eval_I",
    "grad_B",
    "grad_I",
    "weak_residual",
    "SolveResult",
    "SolverOptions",
    "solve_subcritical",
    "brute_force_minimize",
    "extract_lambda",
    "project_to_constraint",
    "make_fm",
    "compute_nu",
    "compute_Rm",
    "run_continuation",
]
