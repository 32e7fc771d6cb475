"""
Constrained minimization of ``I`` over ``{u >= 0, B(u) = R}``.

Every iterate sits exactly on the constraint: a trial point is clipped to
``u >= 0`` and then rescaled by the unique ``k > 0`` with ``B(k u) = R``
(``k -> B(k u)`` is strictly increasing for ``u >= 0``, ``u != 0``).
Descent moves along the component of the ``L^2`` gradient of ``I`` tangent to
the level set of ``B``; steps are Barzilai--Borwein guesses safeguarded by
Armijo backtracking, so accepted energies never increase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expr import check_p1, default_t_samples, default_x_samples, evaluate
from .functional import (
    ProblemSpec,
    antiderivative,
    energy_change,
    eval_B,
    eval_I,
    f_pairing,
    grad_B,
    grad_I,
    weak_residual,
)
from .mesh import gradient, integrate
from .quadrature import adaptive_simpson

__all__ = [
    "InfeasibleError",
    "PreconditionError",
    "SolverOptions",
    "TraceRow",
    "SolveResult",
    "find_scaling",
    "project_to_constraint",
    "constant_level",
    "projected_gradient",
    "solve_subcritical",
    "extract_lambda",
    "lambda_least_squares",
    "brute_force_minimize",
]

_EPS = np.finfo(float).eps


class InfeasibleError(ValueError):
    """No nonnegative rescaling of the field reaches ``B = R``."""


class PreconditionError(ValueError):
    """A structural condition on ``f`` failed; ``reports`` carries the audits."""

    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = list(reports)


@dataclass
class SolverOptions:
    grad_tol: float | None = None  # default 1e-8 * (1 + |I(u0)|)
    constraint_tol: float | None = None  # default 1e-10 * R
    max_iter: int = 50_000
    armijo_factor: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 60
    residual_tol: float = 1e-8
    max_restarts: int = 5
    restart_noise: float = 1e-2
    seed: int = 0
    clip_tol: float = 0.0
    check_preconditions: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "SolverOptions":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown solver option(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class TraceRow:
    iter: int
    I: float
    B: float
    step: float
    kind: str = "step"  # start | step | restart

    def to_dict(self) -> dict:
        return {"iter": self.iter, "I": self.I, "B": self.B, "step": self.step, "kind": self.kind}


@dataclass
class SolveResult:
    u: np.ndarray = field(repr=False)
    lam: float
    mu: float
    iterations: int
    residual: float
    status: str  # converged | max_iter | stalled | infeasible
    trace: list[TraceRow] = field(default_factory=list, repr=False)
    B: float = float("nan")
    grad_norm: float = float("nan")
    restarts: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self, include_trace: bool = True) -> dict:
        out = {
            "lambda": self.lam,
            "mu": self.mu,
            "iterations": self.iterations,
            "residual": self.residual,
            "status": self.status,
            "B": self.B,
            "grad_norm": self.grad_norm,
            "restarts": self.restarts,
            "min_u": float(np.min(self.u)),
            "max_u": float(np.max(self.u)),
            "warnings": list(self.warnings),
        }
        if include_trace:
            out["trace"] = [row.to_dict() for row in self.trace]
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


# --------------------------------------------------------------------------
# constraint projection
# --------------------------------------------------------------------------


def _default_ctol(spec: ProblemSpec, constraint_tol):
    return 1e-10 * spec.R if constraint_tol is None else float(constraint_tol)


def find_scaling(
    spec: ProblemSpec,
    u,
    constraint_tol: float | None = None,
    k0: float = 1.0,
    polish: bool = True,
):
    """Return ``(k, B(k u))`` with ``k > 0`` solving ``B(k u) = R``.

    ``k -> B(k u)`` is increasing and convex for ``u >= 0``, so Newton from
    ``k0`` converges from either side; bisection (or doubling while no upper
    bracket is known, up to ``k = 1e12``) is the fallback. With ``polish``
    Newton continues past the tolerance until it stops making progress, so
    smooth instances end at rounding level.
    """
    mesh = spec.mesh
    u = mesh.check_scalar(u, "u")
    if np.any(u < 0):
        raise ValueError(f"projection needs u >= 0, min(u) = {u.min()!r}")
    if not np.any(u > 0):
        raise InfeasibleError("u is identically zero; no scaling reaches B = R")
    tol = _default_ctol(spec, constraint_tol)
    coords = list(mesh.coordinates())
    R = spec.R

    def phi(k):
        return integrate(mesh, antiderivative(spec.f, k * u, coords, spec.quad_tol)) - R

    def dphi(k):
        return integrate(mesh, u * np.asarray(spec.f(k * u, coords)))

    k = float(k0)
    val = phi(k)
    lo, hi = (k, math.inf) if val < 0 else (0.0, k)
    best_k, best_val = k, val
    for _ in range(300):
        if val == 0 or (not polish and abs(val) <= tol):
            break
        d = dphi(k)
        k_new = k - val / d if d > 0 else math.nan
        if not (lo < k_new < hi):
            k_new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * k
        if k_new > 1e12:
            raise InfeasibleError(f"B(k u) stays below R = {R} up to k = 1e12 (B grows too slowly)")
        if k_new == k:
            break
        step = abs(k_new - k)
        k, val = k_new, phi(k_new)
        if val < 0:
            lo = k
        else:
            hi = k
        if abs(val) < abs(best_val) or (abs(val) == abs(best_val) and val >= 0):
            best_k, best_val = k, val
        if abs(best_val) <= tol and step <= 16.0 * _EPS * k:
            break
        if math.isfinite(hi) and hi - lo <= 4.0 * _EPS * hi:
            break
    if not abs(best_val) <= tol:
        raise InfeasibleError(
            f"scaling projection missed the constraint: |B - R| = {abs(best_val):.3e} > {tol:.3e}"
        )
    return best_k, best_val + R


def project_to_constraint(spec: ProblemSpec, u, constraint_tol: float | None = None) -> np.ndarray:
    k, _ = find_scaling(spec, u, constraint_tol)
    return k * spec.mesh.check_scalar(u, "u")


def constant_level(spec: ProblemSpec, constraint_tol: float | None = None) -> float:
    """The ``nu > 0`` with ``int F(nu, x) dV = R``."""
    k, _ = find_scaling(spec, np.ones(spec.mesh.shape), constraint_tol)
    return k


# --------------------------------------------------------------------------
# multipliers
# --------------------------------------------------------------------------


def extract_lambda(spec: ProblemSpec, u) -> float:
    """``lambda = I(u) / int u f(u, x) dV`` (weak equation tested with ``u``)."""
    den = f_pairing(spec, u)
    if den == 0 or not math.isfinite(den):
        raise ValueError(f"int u f(u) dV = {den!r}; cannot extract lambda")
    return eval_I(spec, u) / den


def lambda_least_squares(spec: ProblemSpec, u) -> float:
    """Fit ``grad_I = xi grad_B`` over the nodes; return ``xi / p``."""
    gI = grad_I(spec, u)
    gB = grad_B(spec, u)
    den = float(np.sum(gB * gB))
    if den == 0:
        raise ValueError("grad_B vanishes; cannot fit a multiplier")
    return float(np.sum(gI * gB)) / den / spec.p


# --------------------------------------------------------------------------
# projected gradient descent
# --------------------------------------------------------------------------


def projected_gradient(spec: ProblemSpec, u, gI=None) -> np.ndarray:
    """Tangential part of the ``L^2`` gradient of ``I``, zeroed on active bounds."""
    w = spec.mesh.volume_weight
    if gI is None:
        gI = grad_I(spec, u)
    g = gI / w
    fb = grad_B(spec, u) / w
    free = np.ones(u.shape, dtype=bool)
    pg = g
    for _ in range(3):
        den = float(np.sum((fb * fb * w)[free]))
        xi = float(np.sum((g * fb * w)[free])) / den if den > 0 else 0.0
        pg = np.where(free, g - xi * fb, 0.0)
        active = (u <= 0) & (pg > 0)
        if not np.any(active & free):
            break
        free = free & ~active
    return pg


def _wnorm(spec, v) -> float:
    return math.sqrt(float(np.sum(v * v * spec.mesh.volume_weight)))


def _step_scale(spec: ProblemSpec, u) -> float:
    """Rough inverse Lipschitz constant of the L^2 gradient."""
    inv_h2 = sum(1.0 / h**2 for h in spec.mesh.spacing)
    p = spec.p
    umax = float(np.max(np.abs(u)))
    gu = gradient(spec.mesh, u)
    sq = np.sum(gu * gu, axis=0) + spec.delta**2
    pos = sq[sq > 0]
    omega = float(np.max(pos ** ((p - 2.0) / 2.0))) if pos.size else 1.0
    zero = float(np.max(np.abs(spec.a))) * (umax ** (p - 2.0) if umax > 0 else 1.0)
    L = p * max(p - 1.0, 1.0) * (4.0 * inv_h2 * omega + zero)
    return 1.0 / L if L > 0 else 1.0


def _check_subcritical(spec: ProblemSpec, opts: SolverOptions):
    f = spec.f
    if f.is_critical or f.rho >= spec.p_star - 1.0:
        raise PreconditionError(
            f"declared growth rho = {f.rho} is not below p* - 1 = {spec.p_star - 1.0}; "
            "use the continuation solver for critical growth"
        )
    if opts.check_preconditions:
        report = check_p1(f, default_t_samples(), default_x_samples(spec.mesh.dim, lengths=spec.mesh.lengths))
        if not report.verdict:
            raise PreconditionError(f"f = {f.source} fails the (p1) audit", [report])


def solve_subcritical(
    spec: ProblemSpec,
    u0=None,
    options: SolverOptions | None = None,
    callback: Callable[[ProblemSpec, np.ndarray], None] | None = None,
) -> SolveResult:
    """Minimize ``I`` on ``{u >= 0, B(u) = R}`` by projected gradient descent.

    Parameters
    ----------
    spec : ProblemSpec
        Subcritical instance (declared ``rho < p* - 1``).
    u0 : ndarray, optional
        Nonnegative, not identically zero starting field. Defaults to the
        constant ``nu`` with ``B(nu) = R``.
    options : SolverOptions, optional
    callback : callable, optional
        Called as ``callback(spec, u)`` on the initial point and on every
        accepted iterate.

    Returns
    -------
    SolveResult
    """
    opts = options or SolverOptions()
    _check_subcritical(spec, opts)
    mesh = spec.mesh
    w = mesh.volume_weight
    ctol = _default_ctol(spec, opts.constraint_tol)
    rng = np.random.default_rng(opts.seed)

    if u0 is None:
        u = np.full(mesh.shape, constant_level(spec, ctol))
        Bv = eval_B(spec, u)
    else:
        u0 = mesh.check_scalar(u0, "u0")
        if np.any(u0 < -opts.clip_tol) or not np.any(u0 > 0):
            raise InfeasibleError("u0 must be nonnegative and not identically zero")
        k, Bv = find_scaling(spec, np.maximum(u0, 0.0), ctol)
        u = k * np.maximum(u0, 0.0)

    I = eval_I(spec, u)
    grad_tol = opts.grad_tol if opts.grad_tol is not None else 1e-8 * (1.0 + abs(I))
    trace = [TraceRow(0, I, Bv, 0.0, "start")]
    if callback is not None:
        callback(spec, u)

    warnings: list[str] = []
    restarts = 0
    s = _step_scale(spec, u)
    s_min, s_max = s * 1e-10, s * 1e6
    gI = grad_I(spec, u)
    pg = projected_gradient(spec, u, gI)
    gnorm = _wnorm(spec, pg)
    status = "max_iter"
    it = 0
    while it < opts.max_iter:
        if gnorm <= grad_tol:
            lam = extract_lambda(spec, u)
            res = weak_residual(spec, u, lam)
            if res <= opts.residual_tol or restarts >= opts.max_restarts:
                status = "converged"
                if res > opts.residual_tol:
                    warnings.append(
                        f"projected gradient below tolerance but residual {res:.3e} "
                        f"> {opts.residual_tol:.3e} after {restarts} restarts"
                    )
                break
            restarts += 1
            noisy = u * (1.0 + opts.restart_noise * rng.uniform(-1.0, 1.0, mesh.shape))
            k, Bv = find_scaling(spec, noisy, ctol)
            u = k * noisy
            I = eval_I(spec, u)
            trace.append(TraceRow(it, I, Bv, 0.0, "restart"))
            gI = grad_I(spec, u)
            pg = projected_gradient(spec, u, gI)
            gnorm = _wnorm(spec, pg)
            continue

        it += 1
        accepted = False
        step = s
        for _ in range(opts.max_backtracks):
            v = np.maximum(u - step * pg, 0.0)
            try:
                k, Bt = find_scaling(spec, v, ctol)
            except InfeasibleError:
                step *= opts.armijo_factor
                continue
            trial = k * v
            dI = energy_change(spec, u, trial)
            predicted = float(np.sum(gI * (trial - u)))
            if dI < 0 and dI <= opts.sufficient_decrease * predicted:
                accepted = True
                break
            step *= opts.armijo_factor
        if not accepted:
            lam = extract_lambda(spec, u)
            res = weak_residual(spec, u, lam)
            if res <= opts.residual_tol:
                status = "converged"
                warnings.append(
                    f"line search stalled at rounding level (|pg| = {gnorm:.3e}); residual {res:.3e}"
                )
            else:
                status = "stalled"
            break

        du = trial - u
        gI_new = grad_I(spec, trial)
        pg_new = projected_gradient(spec, trial, gI_new)
        dg = pg_new - pg
        sy = float(np.sum(du * dg * w))
        ss = float(np.sum(du * du * w))
        s = min(max(ss / sy, s_min), s_max) if sy > 0 else min(2.0 * step, s_max)

        u, gI, pg = trial, gI_new, pg_new
        gnorm = _wnorm(spec, pg)
        I = eval_I(spec, u)
        trace.append(TraceRow(it, I, Bt, step))
        if callback is not None:
            callback(spec, u)

    lam = extract_lambda(spec, u)
    return SolveResult(
        u=u,
        lam=lam,
        mu=eval_I(spec, u),
        iterations=it,
        residual=weak_residual(spec, u, lam),
        status=status,
        trace=trace,
        B=eval_B(spec, u),
        grad_norm=gnorm,
        restarts=restarts,
        warnings=warnings,
    )


# --------------------------------------------------------------------------
# brute-force oracle
# --------------------------------------------------------------------------


def brute_force_minimize(
    spec: ProblemSpec,
    restarts: int = 3,
    budget: int = 200_000,
    seed: int = 0,
    min_step: float | None = None,
    constraint_tol: float | None = None,
) -> SolveResult:
    """Derivative-free coordinate descent with shrinking steps.

    Each trial moves one nodal value by ``+-step`` (clipped at 0) and is
    rescaled onto ``B = R``; an improving move is repeated with a doubled
    step while it keeps improving. The step halves after a sweep without
    improvement and the search stops below ``min_step`` (default
    ``1e-4 * mean(u)``). ``budget`` caps energy evaluations across all
    restarts; the best feasible point over ``restarts`` random nonnegative
    starts is returned, polished onto the constraint.
    """
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    mesh = spec.mesh
    if mesh.num_nodes > 200:
        raise ValueError(f"brute force is limited to 200 nodes, mesh has {mesh.num_nodes}")
    ctol = _default_ctol(spec, constraint_tol)
    rng = np.random.default_rng(seed)
    shape = mesh.shape
    w = mesh.cell_volume
    coords = list(mesh.coordinates())
    xflat = [c.ravel() for c in coords]
    R = spec.R

    def node_dF(old, new, i):
        """``F(new, x_i) - F(old, x_i)``; the interval is short, so this is cheap."""
        xi = [c[i] for c in xflat]

        def integrand(s, owner):
            return evaluate(spec.f.ast, s, [np.full(s.shape, v) for v in xi])

        return float(adaptive_simpson(integrand, [old], [new], spec.quad_tol, min_depth=0)[0])

    def node_f(value, i):
        return float(spec.f(np.array([value]), [np.array([c[i]]) for c in xflat])[0])

    evals = 0
    trace: list[TraceRow] = []
    sweeps = 0
    exhausted = False
    best = None

    def try_move(u, Bu, Du, i, value):
        """Rescaled candidate and its energy change, or None if infeasible."""
        Bv = Bu + w * node_dF(u[i], value, i)
        Dv = Du + w * (value * node_f(value, i) - u[i] * node_f(u[i], i))
        v = u.copy()
        v[i] = value
        if not np.any(v > 0):
            return None
        k0 = 1.0 - (Bv - R) / Dv if Dv > 0 else 1.0
        try:
            k, Bc = find_scaling(spec, v.reshape(shape), ctol, k0=max(k0, 1e-3), polish=False)
        except InfeasibleError:
            return None
        cand = k * v
        return cand, Bc, energy_change(spec, u.reshape(shape), cand.reshape(shape))

    for r in range(restarts):
        if evals >= budget:
            exhausted = True
            break
        start = rng.uniform(0.5, 1.5, shape)
        try:
            k, Bu = find_scaling(spec, start, ctol)
        except InfeasibleError:
            continue
        u = (k * start).ravel()
        Du = f_pairing(spec, u.reshape(shape))
        I = eval_I(spec, u.reshape(shape))
        evals += 1
        trace.append(TraceRow(sweeps, I, Bu, 0.0, "restart" if r else "start"))
        step = 0.25 * float(np.mean(u))
        floor = 1e-4 * float(np.mean(u)) if min_step is None else float(min_step)
        while step > floor and evals < budget:
            improved = False
            for i in range(u.size):
                for sign in (1.0, -1.0):
                    moved = False
                    s = step
                    while evals < budget:
                        value = max(u[i] + sign * s, 0.0)
                        if value == u[i]:
                            break
                        out = try_move(u, Bu, Du, i, value)
                        evals += 1
                        if out is None or not out[2] < 0:
                            break
                        u, Bu = out[0], out[1]
                        Du = f_pairing(spec, u.reshape(shape))
                        moved = True
                        s *= 2.0
                    if moved:
                        improved = True
                        break
            sweeps += 1
            if not improved:
                step *= 0.5
            I = eval_I(spec, u.reshape(shape))
            trace.append(TraceRow(sweeps, I, Bu, step))
        if evals >= budget and step > floor:
            exhausted = True
        if best is None or I < best[1]:
            best = (u.reshape(shape).copy(), I)
    if best is None:
        raise InfeasibleError("budget exhausted before any feasible point was found")
    k, Bv = find_scaling(spec, best[0], ctol)
    u = k * best[0]
    lam = extract_lambda(spec, u)
    return SolveResult(
        u=u,
        lam=lam,
        mu=eval_I(spec, u),
        iterations=sweeps,
        residual=weak_residual(spec, u, lam),
        status="max_iter" if exhausted else "converged",
        trace=trace,
        B=Bv,
        restarts=restarts,
    )
