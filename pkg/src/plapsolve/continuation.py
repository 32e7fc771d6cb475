"""
Critical growth through a family of subcritical regularizations.

For a critical ``f`` (growth exponent ``p* - 1``) and ``m = 1, 2, ...`` the
nonlinearity ``f_m = sign(t) |f(t, x)|^(m/(m+1))`` is odd, increasing and
grows like ``|t|^(m/(m+1) (p*-1))``, so each ``f_m`` problem is subcritical.
The constraint level follows ``f``: with ``nu`` fixed by
``int F(nu, x) dV = R``, the ``m``-th problem uses ``R_m = int F_m(nu, x) dV``.
Solutions are warm-started along an increasing ``m`` schedule.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .expr import (
    Binary,
    Nonlinearity,
    Num,
    Unary,
    Var,
    check_growth,
    check_p1,
    check_p4,
    default_t_grid,
    default_t_samples,
    default_x_samples,
)
from .functional import ProblemSpec, antiderivative, eval_B, eval_I, weak_residual
from .mesh import gradient, integrate
from .optimizer import (
    InfeasibleError,
    PreconditionError,
    SolveResult,
    SolverOptions,
    constant_level,
    extract_lambda,
    solve_subcritical,
)

__all__ = [
    "DEFAULT_SCHEDULE",
    "ContinuationRow",
    "ContinuationTrace",
    "make_fm",
    "compute_nu",
    "compute_Rm",
    "check_critical_preconditions",
    "run_continuation",
]

DEFAULT_SCHEDULE = (1, 2, 4, 8, 16, 32)


def make_fm(f: Nonlinearity, m: int, p_star: float | None = None) -> Nonlinearity:
    """Build ``sign(t) |f|^(m/(m+1))`` with its declared subcritical growth.

    With ``theta = m/(m+1)`` the declared exponent is ``theta (p* - 1)`` for a
    critical ``f`` (``p_star`` required) and ``theta rho`` otherwise. Since
    ``(b + c|t|^q)^theta <= b^theta + c^theta |t|^(theta q)``, the constant
    ``max(b^theta, c^theta)`` bounds ``f_m`` in the ``b (1 + |t|^rho)`` form.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    m = int(m)
    theta = m / (m + 1.0)
    if f.is_critical:
        if p_star is None:
            raise ValueError("a critical f needs p_star to declare the growth of f_m")
        rho = theta * (p_star - 1.0)
    else:
        rho = theta * float(f.rho)
    ast = Binary("mul", Unary("sign", Var()), Binary("pow", Unary("abs", f.ast), Num(theta)))
    b = max(f.b**theta, f.c**theta)
    return Nonlinearity(ast, rho, b, f.c**theta)


def compute_nu(spec: ProblemSpec, constraint_tol: float | None = None) -> float:
    """The constant level ``nu > 0`` with ``int F(nu, x) dV = R``."""
    report = check_p1(spec.f, default_t_samples(), default_x_samples(spec.mesh.dim, lengths=spec.mesh.lengths))
    if not report.verdict:
        raise PreconditionError(f"f = {spec.f.source} fails the (p1) audit", [report])
    return constant_level(spec, constraint_tol)


def compute_Rm(spec: ProblemSpec, m: int, nu: float) -> float:
    """``R_m = int_M int_0^nu |f(t, x)|^(m/(m+1)) dt dV``."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    fm = make_fm(spec.f, m, spec.p_star)
    mesh = spec.mesh
    Fm = antiderivative(fm, mesh.constant(nu), list(mesh.coordinates()), spec.quad_tol)
    return integrate(mesh, Fm)


@dataclass
class ContinuationRow:
    m: int
    Rm: float
    mu: float
    lam: float
    l1: float
    gradp: float
    lambdaRm: float
    residual: float
    status: str
    iterations: int
    dual_norm: float

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "Rm": self.Rm,
            "mu": self.mu,
            "lambda": self.lam,
            "l1": self.l1,
            "gradp": self.gradp,
            "lambdaRm": self.lambdaRm,
            "residual": self.residual,
            "status": self.status,
            "iterations": self.iterations,
            "dual_norm": self.dual_norm,
        }


CSV_COLUMNS = ["m", "Rm", "mu", "lambda", "l1", "gradp", "lambdaRm", "residual", "status", "iterations", "dual_norm"]


@dataclass
class ContinuationTrace:
    """Rows of bounded quantities along the schedule plus the final answer.

    ``final`` is the last subcritical solution scored against the original
    ``f``: ``lam`` is re-extracted from ``f`` and ``residual`` is the weak
    residual for that pair, while ``final_residual_lam_m`` is the residual
    against ``f`` with the multiplier of the ``f_m`` problem.
    """

    nu: float
    R_target: float
    vol: float
    rows: list[ContinuationRow] = field(default_factory=list)
    final: SolveResult | None = None
    final_residual_lam_m: float = float("nan")
    status: str = "completed"
    message: str = ""
    schedule: list[int] = field(default_factory=list)

    @property
    def rm_bound(self) -> float:
        return self.nu * self.vol + self.R_target

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "R": self.R_target,
            "vol": self.vol,
            "rm_bound": self.rm_bound,
            "schedule": list(self.schedule),
            "rows": [r.to_dict() for r in self.rows],
            "final": None if self.final is None else self.final.to_dict(include_trace=False),
            "final_residual_lambda_m": self.final_residual_lam_m,
            "status": self.status,
            "message": self.message,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                d = row.to_dict()
                writer.writerow([d[c] if isinstance(d[c], (int, str)) else repr(float(d[c])) for c in CSV_COLUMNS])


def check_critical_preconditions(spec: ProblemSpec) -> list:
    """Run the (p1), (p3) and (p4) audits; raise PreconditionError on failure."""
    f = spec.f
    if not f.is_critical:
        raise PreconditionError(
            f"continuation needs f_growth.rho = 'critical', got rho = {f.rho}"
        )
    x = default_x_samples(spec.mesh.dim, lengths=spec.mesh.lengths)
    reports = [
        check_p1(f, default_t_samples(), x),
        check_growth(f, default_t_samples(), x, b=f.b, c=f.c, p_star=spec.p_star),
        check_p4(f, spec.p_star, default_t_grid(), x),
    ]
    failed = [r.condition for r in reports if not r.verdict]
    if failed:
        raise PreconditionError(f"f = {f.source} fails the {', '.join(failed)} audit(s)", reports)
    return reports


def _check_schedule(schedule: Sequence[int]) -> list[int]:
    sched = list(schedule)
    if len(sched) < 3:
        raise ValueError(f"m_schedule needs at least 3 entries, got {len(sched)}")
    for m in sched:
        if int(m) != m or m < 1:
            raise ValueError(f"m_schedule entries must be positive integers, got {m}")
    sched = [int(m) for m in sched]
    if any(b <= a for a, b in zip(sched, sched[1:])):
        raise ValueError(f"m_schedule must be strictly increasing, got {sched}")
    return sched


def _dual_norm(spec: ProblemSpec, u) -> float:
    """``||f(u, .)||_q`` with ``q = p*/(p* - 1)``, a descriptive statistic."""
    q = spec.p_star / (spec.p_star - 1.0)
    fu = np.abs(np.asarray(spec.f(u, list(spec.mesh.coordinates()))))
    return integrate(spec.mesh, fu**q) ** (1.0 / q)


def run_continuation(
    spec: ProblemSpec,
    m_schedule: Sequence[int] = DEFAULT_SCHEDULE,
    options: SolverOptions | None = None,
    callback: Callable[[ProblemSpec, np.ndarray], None] | None = None,
) -> ContinuationTrace:
    """Solve the ``f_m`` problems along ``m_schedule`` with warm starts.

    Preconditions (critical declaration, audits, schedule shape) are checked
    before any solve. A failed inner solve truncates the trace and sets its
    ``status``; ``callback`` is forwarded to every inner solve.
    """
    sched = _check_schedule(m_schedule)
    check_critical_preconditions(spec)
    opts = options or SolverOptions()
    nu = compute_nu(spec, opts.constraint_tol)
    mesh = spec.mesh
    trace = ContinuationTrace(nu, spec.R, mesh.total_volume, schedule=sched)
    u = mesh.constant(nu)
    result = None
    spec_m = None
    for m in sched:
        fm = make_fm(spec.f, m, spec.p_star)
        Rm = compute_Rm(spec, m, nu)
        spec_m = spec.with_(f=fm, R=Rm)
        try:
            result = solve_subcritical(spec_m, u, opts, callback)
        except (InfeasibleError, PreconditionError, ArithmeticError) as exc:
            trace.status = "failed"
            trace.message = f"m = {m}: {exc}"
            break
        u = result.u
        trace.rows.append(
            ContinuationRow(
                m=m,
                Rm=Rm,
                mu=result.mu,
                lam=result.lam,
                l1=integrate(mesh, np.abs(u)),
                gradp=integrate(mesh, np.sum(gradient(mesh, u) ** 2, axis=0) ** (spec.p / 2.0)),
                lambdaRm=abs(result.lam) * Rm,
                residual=result.residual,
                status=result.status,
                iterations=result.iterations,
                dual_norm=_dual_norm(spec_m, u),
            )
        )
        if not result.converged:
            trace.status = "failed"
            trace.message = f"m = {m}: inner solve ended with status {result.status}"
            break
    if result is not None:
        lam = extract_lambda(spec, result.u)
        trace.final = SolveResult(
            u=result.u,
            lam=lam,
            mu=eval_I(spec, result.u),
            iterations=result.iterations,
            residual=weak_residual(spec, result.u, lam),
            status=result.status,
            B=eval_B(spec, result.u),
            grad_norm=result.grad_norm,
            restarts=result.restarts,
            warnings=list(result.warnings),
            trace=result.trace,
        )
        trace.final_residual_lam_m = weak_residual(spec, result.u, result.lam)
    return trace
