"""
Empirical checks of the inequalities and qualitative properties behind the
solver: interpolation and embedding constants fitted on sampled fields, the
``L^1`` bound on feasible points, the nondegeneracy margin of a continuation
run and positivity of solutions.

Every constant computed here is a *discrete estimate*: it is the best value
consistent with a finite sample of fields on one mesh, never a bound on the
continuum. Fits and validations use disjoint, seeded sample sets and each
report records its seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .expr import DomainError, Nonlinearity, default_t_samples, default_x_samples
from .functional import ProblemSpec, antiderivative, eval_B
from .mesh import Mesh, gradient, integrate
from .optimizer import constant_level

__all__ = [
    "LABEL",
    "InequalityReport",
    "sample_fields",
    "l1_norm",
    "lp_integral",
    "grad_lp_integral",
    "estimate_interpolation_constant",
    "sobolev_constants",
    "claim1_bound",
    "check_claim1_bound",
    "Claim1Monitor",
    "check_claim7_diagnostic",
    "check_positivity",
    "check_lemma1",
]

LABEL = "discrete estimate"
FAMILIES = ("constant", "fourier", "piecewise", "spike")


@dataclass
class InequalityReport:
    """Outcome of one inequality check.

    For checks over many samples ``lhs_max`` and ``rhs_min`` are the two
    sides at the worst sample (largest ``lhs - rhs``), so that
    ``holds == (lhs_max <= rhs_min + tolerance)`` in every case except
    ``status == "not-applicable"``.
    """

    name: str
    lhs_max: float
    rhs_min: float
    holds: bool
    status: str = ""  # holds | fails | not-applicable
    witness: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    seed: int | None = None
    tolerance: float = 0.0
    label: str = LABEL
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.status:
            self.status = "holds" if self.holds else "fails"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs_max": self.lhs_max,
            "rhs_min": self.rhs_min,
            "holds": bool(self.holds),
            "status": self.status,
            "witness": self.witness,
            "parameters": self.parameters,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "label": self.label,
            "details": self.details,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


# --------------------------------------------------------------------------
# norms and samples
# --------------------------------------------------------------------------


def l1_norm(mesh: Mesh, u) -> float:
    return integrate(mesh, np.abs(u))


def lp_integral(mesh: Mesh, u, q: float) -> float:
    """``int |u|^q dV``."""
    return integrate(mesh, np.abs(u) ** q)


def grad_lp_integral(mesh: Mesh, u, q: float) -> float:
    """``int |grad u|^q dV`` with the Euclidean norm of the forward differences."""
    g = gradient(mesh, u)
    return integrate(mesh, np.sum(g * g, axis=0) ** (q / 2.0))


def _fourier(mesh: Mesh, rng) -> np.ndarray:
    x = mesh.coordinates()
    u = np.full(mesh.shape, rng.uniform(-1.0, 1.0))
    for _ in range(int(rng.integers(1, 6))):
        k = rng.integers(-3, 4, size=mesh.dim)
        if not k.any():
            continue
        phase = sum(2.0 * math.pi * k[d] * x[d] / mesh.lengths[d] for d in range(mesh.dim))
        amp = rng.normal() / (1.0 + float(np.sum(k * k)))
        u = u + amp * np.cos(phase + rng.uniform(0.0, 2.0 * math.pi))
    return u


def _piecewise(mesh: Mesh, rng) -> np.ndarray:
    u = np.zeros(mesh.shape)
    for _ in range(int(rng.integers(1, 5))):
        lo = [int(rng.integers(0, N)) for N in mesh.shape]
        size = [int(rng.integers(1, N + 1)) for N in mesh.shape]
        idx = np.ix_(*[(np.arange(s) + l) % N for l, s, N in zip(lo, size, mesh.shape)])
        u[idx] += rng.normal()
    return u


def _spike(mesh: Mesh, rng) -> np.ndarray:
    # translation invariance makes the position irrelevant for every norm
    width = int(rng.integers(0, 3))
    center = [int(rng.integers(0, N)) for N in mesh.shape]
    d2 = np.zeros(mesh.shape)
    for axis, (c, N) in enumerate(zip(center, mesh.shape)):
        offset = (np.arange(N) - c + N // 2) % N - N // 2
        shape = [1] * mesh.dim
        shape[axis] = N
        d2 = d2 + offset.reshape(shape).astype(float) ** 2
    if width == 0:
        return (d2 == 0).astype(float)
    return np.exp(-d2 / (2.0 * width**2))


_GENERATORS = {
    "fourier": _fourier,
    "piecewise": _piecewise,
    "spike": _spike,
}


def sample_fields(
    mesh: Mesh,
    count: int,
    seed: int = 0,
    families: Sequence[str] = FAMILIES,
) -> list[np.ndarray]:
    """Seeded test fields cycling through ``families``.

    ``constant`` fields are ``c`` with ``c`` uniform in ``[0.1, 2]``;
    ``fourier`` fields add up to 5 random modes with ``|k_i| <= 3`` and
    amplitudes damped by ``1/(1 + |k|^2)``; ``piecewise`` fields sum up to 4
    random periodic boxes of normal heights; ``spike`` fields are a single
    node or a Gaussian bump of width 1 or 2 nodes.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    unknown = set(families) - set(FAMILIES)
    if unknown or not families:
        raise ValueError(f"unknown sample families {sorted(unknown)}; choose from {FAMILIES}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        fam = families[i % len(families)]
        if fam == "constant":
            out.append(mesh.constant(rng.uniform(0.1, 2.0)))
        else:
            out.append(_GENERATORS[fam](mesh, rng))
    return out


def _resolve_samples(mesh, samples, count, seed):
    if samples is None:
        return sample_fields(mesh, count, seed), seed
    fields = [mesh.check_scalar(s, "sample") for s in samples]
    if not fields:
        raise ValueError("no samples given")
    return fields, None


# --------------------------------------------------------------------------
# fitted constants
# --------------------------------------------------------------------------


def _worst(lhs, rhs):
    j = int(np.argmax(lhs - rhs))
    return j, float(lhs[j]), float(rhs[j])


def estimate_interpolation_constant(
    mesh: Mesh,
    p: float,
    epsilon: float,
    samples=None,
    count: int = 200,
    seed: int = 0,
    validation=None,
    validation_count: int = 200,
    validation_seed: int | None = None,
    tol: float = 1e-12,
) -> InequalityReport:
    """Fit ``C(eps)`` in ``int|u|^p <= eps int|grad u|^p + C(eps) (int|u|)^p``.

    ``C(eps)`` is the largest value of
    ``(int|u|^p - eps int|grad u|^p) / (int|u|)^p`` over the nonzero fitting
    samples. Every term is ``p``-homogeneous, so samples are compared after
    normalizing ``int|u| = 1``. The report's verdict is the validation
    outcome on a disjoint sample set (seed ``seed + 1`` unless given).
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    fit, fit_seed = _resolve_samples(mesh, samples, count, seed)

    def terms(fields):
        rows = []
        for u in fields:
            l1 = l1_norm(mesh, u)
            if l1 == 0:
                continue
            u = u / l1
            rows.append((lp_integral(mesh, u, p), grad_lp_integral(mesh, u, p)))
        return np.array(rows).reshape(-1, 2)

    t_fit = terms(fit)
    if t_fit.shape[0] == 0:
        raise ValueError("every fitting sample is identically zero")
    ratios = t_fit[:, 0] - epsilon * t_fit[:, 1]
    C = float(ratios.max())
    vseed = (seed + 1 if validation_seed is None else validation_seed) if validation is None else None
    val = sample_fields(mesh, validation_count, vseed) if validation is None else validation
    t_val = terms(val)
    if t_val.shape[0] == 0:
        raise ValueError("every validation sample is identically zero")
    lhs = t_val[:, 0]
    rhs = epsilon * t_val[:, 1] + C
    j, lw, rw = _worst(lhs, rhs)
    violations = int(np.sum(lhs > rhs + tol))
    return InequalityReport(
        name="interpolation",
        lhs_max=lw,
        rhs_min=rw,
        holds=violations == 0,
        witness={"validation_index": j, "fit_argmax": int(np.argmax(ratios))},
        parameters={"epsilon": epsilon, "C_epsilon": C, "p": p},
        seed=fit_seed,
        tolerance=tol,
        details={
            "validation_seed": vseed,
            "fit_count": int(t_fit.shape[0]),
            "validation_count": int(t_val.shape[0]),
            "violations": violations,
            "normalization": "int |u| dV = 1",
        },
    )


def sobolev_constants(
    mesh: Mesh,
    p: float,
    samples=None,
    count: int = 200,
    seed: int = 0,
    validation=None,
    validation_count: int = 200,
    validation_seed: int | None = None,
    tol: float = 1e-12,
) -> InequalityReport:
    """Fit ``(K, D)`` in ``||u||_{p*}^p <= K ||grad u||_p^p + D ||u||_p^p``.

    Samples are normalized to ``||u||_p = 1`` and the linear program
    ``min K + D`` subject to the inequality on every fitting sample and
    ``K, D >= 0`` picks the constants. The verdict is the validation
    outcome on a disjoint sample set.
    """
    n = mesh.dim
    if not 1.0 < p < n:
        raise ValueError(f"p must lie in (1, {n}), got {p}")
    p_star = n * p / (n - p)
    fit, fit_seed = _resolve_samples(mesh, samples, count, seed)

    def terms(fields):
        rows = []
        for u in fields:
            norm = lp_integral(mesh, u, p) ** (1.0 / p)
            if norm == 0:
                continue
            u = u / norm
            lhs = lp_integral(mesh, u, p_star) ** (p / p_star)
            rows.append((lhs, grad_lp_integral(mesh, u, p), 1.0))
        return np.array(rows).reshape(-1, 3)

    t_fit = terms(fit)
    if t_fit.shape[0] == 0:
        raise ValueError("every fitting sample is identically zero")
    # a_i <= K g_i + D  <=>  -g_i K - D <= -a_i
    lp = linprog(
        c=[1.0, 1.0],
        A_ub=-t_fit[:, 1:],
        b_ub=-t_fit[:, 0],
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if not lp.success:
        raise RuntimeError(f"(K, D) fit failed: {lp.message}")
    K, D = (float(v) for v in lp.x)
    # the solver works to a relative feasibility tolerance; restore exact feasibility
    slack = t_fit[:, 0] - (K * t_fit[:, 1] + D)
    D += max(0.0, float(slack.max()))
    vseed = (seed + 1 if validation_seed is None else validation_seed) if validation is None else None
    val = sample_fields(mesh, validation_count, vseed) if validation is None else validation
    t_val = terms(val)
    if t_val.shape[0] == 0:
        raise ValueError("every validation sample is identically zero")
    lhs = t_val[:, 0]
    rhs = K * t_val[:, 1] + D
    j, lw, rw = _worst(lhs, rhs)
    violations = int(np.sum(lhs > rhs + tol))
    return InequalityReport(
        name="sobolev",
        lhs_max=lw,
        rhs_min=rw,
        holds=violations == 0,
        witness={"validation_index": j},
        parameters={"K": K, "D": D, "p": p, "p_star": p_star},
        seed=fit_seed,
        tolerance=tol,
        details={
            "validation_seed": vseed,
            "fit_count": int(t_fit.shape[0]),
            "validation_count": int(t_val.shape[0]),
            "violations": violations,
            "normalization": "||u||_p = 1",
            "objective": "min K + D",
        },
    )


# --------------------------------------------------------------------------
# claims on solutions
# --------------------------------------------------------------------------


def claim1_bound(spec: ProblemSpec, t0: float) -> tuple[float, float]:
    """Return ``(eta, N)`` with ``eta = min_x f(t0, x)`` and ``N = R/eta + 2 t0 vol``."""
    if not t0 > 0:
        raise ValueError(f"t0 must be positive, got {t0}")
    mesh = spec.mesh
    vals = np.asarray(spec.f(mesh.constant(t0), list(mesh.coordinates())))
    eta = float(vals.min())
    if not eta > 0:
        raise ValueError(f"eta = min f(t0, x) = {eta} <= 0 at t0 = {t0}; pick a larger t0")
    return eta, spec.R / eta + 2.0 * t0 * mesh.total_volume


def check_claim1_bound(
    spec: ProblemSpec,
    u,
    t0: float | None = None,
    tol: float = 1e-8,
    constraint_tol: float | None = None,
) -> InequalityReport:
    """Check ``||u||_1 <= R/eta + 2 t0 vol`` for a feasible ``u``.

    ``t0`` defaults to ``nu/2`` with ``nu`` the constant level of ``spec``.
    """
    mesh = spec.mesh
    u = mesh.check_scalar(u, "u")
    if np.any(u < 0):
        raise ValueError(f"u must be nonnegative, min(u) = {u.min()!r}")
    ctol = 1e-8 * spec.R if constraint_tol is None else constraint_tol
    B = eval_B(spec, u)
    if abs(B - spec.R) > ctol:
        raise ValueError(f"u is not feasible: |B(u) - R| = {abs(B - spec.R):.3e} > {ctol:.3e}")
    if t0 is None:
        t0 = 0.5 * constant_level(spec)
    eta, N = claim1_bound(spec, t0)
    l1 = l1_norm(mesh, u)
    return InequalityReport(
        name="claim1",
        lhs_max=l1,
        rhs_min=N,
        holds=l1 <= N + tol,
        parameters={"t0": t0, "eta": eta, "N": N, "R": spec.R, "vol": mesh.total_volume},
        tolerance=tol,
    )


class Claim1Monitor:
    """Solver callback that checks the ``L^1`` bound on every accepted iterate.

    The monitor keys its bound on the ``ProblemSpec`` it is called with, so
    one instance can follow the changing subproblems of a continuation run.
    """

    def __init__(self, t0: float, tol: float = 1e-8):
        self.t0 = float(t0)
        self.tol = tol
        self.count = 0
        self.violations: list[dict] = []
        self.max_ratio = 0.0
        self._bounds: dict[int, tuple] = {}

    def __call__(self, spec: ProblemSpec, u) -> None:
        key = id(spec)
        if key not in self._bounds:
            self._bounds[key] = (spec, claim1_bound(spec, self.t0))
        _, (eta, N) = self._bounds[key]
        l1 = l1_norm(spec.mesh, u)
        self.count += 1
        self.max_ratio = max(self.max_ratio, l1 / N)
        if l1 > N + self.tol:
            self.violations.append({"iterate": self.count, "l1": l1, "N": N, "R": spec.R})

    @property
    def holds(self) -> bool:
        return self.count > 0 and not self.violations

    def report(self) -> InequalityReport:
        worst = max(self.violations, key=lambda v: v["l1"] - v["N"]) if self.violations else None
        return InequalityReport(
            name="claim1_streamed",
            lhs_max=self.max_ratio,
            rhs_min=1.0,
            holds=self.holds,
            witness=worst or {},
            parameters={"t0": self.t0},
            tolerance=self.tol,
            details={"iterates": self.count, "violations": len(self.violations), "lhs": "max ||u||_1 / N"},
        )


def check_claim7_diagnostic(trace, K: float, c1: float, p: float, p_star: float) -> InequalityReport:
    """Compare ``max_m K mu_m`` with ``(R p*/c1)^(p/p*)``.

    The margin ``2 eps = (R p*/c1)^(p/p*) - max_m K mu_m`` may be negative;
    that is reported, not raised. ``c1 <= 0`` marks the diagnostic as not
    applicable, and a trace whose energies are all ``<= 0`` satisfies it
    trivially.
    """
    rows = list(trace.rows)
    if not rows:
        raise ValueError("trace has no rows")
    R = trace.R_target
    mus = np.array([r.mu for r in rows])
    lhs = float(np.max(K * mus))
    params = {"K": K, "c1": c1, "p": p, "p_star": p_star, "R": R}
    if not c1 > 0:
        return InequalityReport(
            "claim7", lhs, math.nan, False, "not-applicable", parameters=params,
            details={"reason": "c1 <= 0: no critical term to balance"},
        )
    rhs = (R * p_star / c1) ** (p / p_star)
    if np.all(mus <= 0):
        return InequalityReport(
            "claim7", lhs, rhs, True, parameters=params,
            details={"margin": rhs - lhs, "reason": "every mu_m <= 0"},
        )
    m_arg = int(rows[int(np.argmax(K * mus))].m)
    return InequalityReport(
        "claim7", lhs, rhs, lhs < rhs, parameters=params, witness={"m": m_arg},
        details={"margin": rhs - lhs},
    )


def check_positivity(result, pos_tol: float = 1e-6) -> InequalityReport:
    """``min u > pos_tol`` when ``lambda >= 0``; not applicable otherwise."""
    if not result.converged:
        raise ValueError(f"positivity check needs a converged result, status is {result.status}")
    umin = float(np.min(result.u))
    params = {"lambda": result.lam, "pos_tol": pos_tol}
    if result.lam < 0:
        return InequalityReport(
            "positivity", -umin, -pos_tol, False, "not-applicable", parameters=params,
            witness={"min_u": umin},
        )
    # as an inequality: -min(u) < -pos_tol
    return InequalityReport(
        "positivity", -umin, -pos_tol, umin > pos_tol, parameters=params,
        witness={"min_u": umin, "argmin": int(np.argmin(result.u))},
    )


# --------------------------------------------------------------------------
# antiderivative properties
# --------------------------------------------------------------------------


def check_lemma1(
    f: Nonlinearity,
    t_samples=None,
    x_samples=None,
    quad_tol: float = 1e-10,
    dim: int = 3,
    unbounded_level: float = 1e6,
    max_doublings: int = 80,
) -> InequalityReport:
    """Audit the antiderivative ``F`` of an odd increasing ``f`` on a box.

    Checks ``F >= 0``, ``F(0, x) = 0``, strict increase of ``F`` over the
    nonnegative samples, ``|F(t, x) - F(-t, x)| <= quad_tol`` (plus
    ``64 eps |F|`` for large values) and, as a
    finite stand-in for ``F(inf, x) = inf``, that doubling ``t`` from the
    largest sample drives ``min_x F`` past ``unbounded_level``.
    """
    t = default_t_samples() if t_samples is None else np.asarray(t_samples, dtype=float)
    xs = default_x_samples(dim) if x_samples is None else np.atleast_2d(np.asarray(x_samples, dtype=float))
    T, X = np.meshgrid(t, np.arange(xs.shape[0]), indexing="ij")
    coords = [xs[X, k] for k in range(xs.shape[1])]
    F = antiderivative(f, T, coords, quad_tol)
    Fneg = antiderivative(f, -T, coords, quad_tol)
    F0 = antiderivative(f, np.zeros_like(T[:1]), [c[:1] for c in coords], quad_tol)
    violations: dict[str, int] = {}
    violations["i_nonnegative"] = int(np.sum(F < 0))
    violations["ii_zero"] = int(np.sum(F0 != 0))
    pos = t >= 0
    order = np.argsort(t[pos])
    Fp = F[pos][order]
    violations["iii_increasing"] = int(np.sum(np.diff(Fp, axis=0) <= 0))
    sym = np.abs(F - Fneg)
    # quad_tol, floored at the quadrature's rounding level for large |F|
    even_tol = quad_tol + 64.0 * np.finfo(float).eps * np.maximum(np.abs(F), np.abs(Fneg))
    violations["iv_even"] = int(np.sum(sym > even_tol))
    # finite surrogate for F(inf, x) = inf
    top = float(np.max(np.abs(t)))
    reached = None
    x_row = [c[0] for c in coords]
    level = top if top > 0 else 1.0
    for _ in range(max_doublings):
        try:
            vals = antiderivative(f, np.full(xs.shape[0], level), x_row, quad_tol)
        except DomainError:
            break
        if float(vals.min()) > unbounded_level:
            reached = level
            break
        level *= 2.0
    violations["ii_unbounded"] = 0 if reached is not None else 1
    total = sum(violations.values())
    return InequalityReport(
        name="lemma1",
        lhs_max=float(total),
        rhs_min=0.0,
        holds=total == 0,
        witness={"max_even_defect": float(sym.max()), "min_F": float(F.min()), "unbounded_at": reached},
        parameters={"f": f.source, "quad_tol": quad_tol, "unbounded_level": unbounded_level},
        tolerance=0.0,
        details={"violations": violations, "t_count": int(t.size), "x_count": int(xs.shape[0])},
    )
