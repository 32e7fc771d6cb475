"""
Discrete energy ``I``, constraint ``B`` and their first variations.

On a mesh with weights ``w``::

    F(t, x) = int_0^t f(s, x) ds                      (adaptive Simpson)
    B(u)    = sum_i F(u_i, x_i) w_i
    I(u)    = sum_i (|grad u|_i^2 + delta^2)^(p/2) w_i + sum_i a_i |u_i|^p w_i

Gradients are nodal (weighted) representations: ``<grad_I(u), phi>`` is the
directional derivative of ``I`` at ``u`` along ``phi`` for the plain sum
``<g, phi> = sum_i g_i phi_i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .expr import Node, Nonlinearity, evaluate, max_coord_index, parse
from .mesh import Mesh, divergence, gradient, integrate
from .quadrature import adaptive_simpson

__all__ = [
    "ProblemSpec",
    "EnergyReport",
    "SingularWeightError",
    "field_from_expr",
    "antiderivative",
    "eval_F",
    "eval_B",
    "eval_I",
    "grad_I",
    "grad_B",
    "energy_change",
    "f_pairing",
    "weak_residual",
    "energy_report",
]

DEFAULT_QUAD_TOL = 1e-10


class SingularWeightError(ArithmeticError):
    """The p-Laplacian weight is infinite (p < 2, zero gradient, delta = 0)."""


def field_from_expr(mesh: Mesh, expr: str | Node) -> np.ndarray:
    """Sample an ``x``-only expression (such as ``a(x)``) at the mesh nodes."""
    node = parse(expr) if isinstance(expr, str) else expr
    coords = list(mesh.coordinates())
    return np.array(evaluate(node, np.zeros(mesh.shape), coords), dtype=float)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One instance of ``Delta_p u + a u^(p-1) = lambda f(u, x)`` on a torus.

    ``grad_reg_delta=None`` selects the default: ``0`` for ``p >= 2`` and
    ``1e-8 (R/vol)^(1/p) / min_spacing`` for ``p < 2``.
    """

    mesh: Mesh
    p: float
    a: np.ndarray
    f: Nonlinearity
    R: float
    grad_reg_delta: float | None = None
    quad_tol: float = DEFAULT_QUAD_TOL

    def __post_init__(self):
        n = self.mesh.dim
        if not 1.0 < self.p < n:
            raise ValueError(f"p must lie in (1, {n}), got {self.p}")
        if not (self.R > 0 and math.isfinite(self.R)):
            raise ValueError(f"R must be positive, got {self.R}")
        if not self.quad_tol > 0:
            raise ValueError(f"quad_tol must be positive, got {self.quad_tol}")
        a = np.asarray(self.a, dtype=float)
        if a.ndim == 0:
            a = np.full(self.mesh.shape, float(a))
        a = self.mesh.check_scalar(a, "a").copy()
        if not np.all(np.isfinite(a)):
            raise ValueError("a must be finite")
        a.flags.writeable = False
        object.__setattr__(self, "a", a)
        k = max_coord_index(self.f.ast)
        if k > n:
            raise ValueError(f"f references x{k} on a {n}-dimensional mesh")
        delta = self.grad_reg_delta
        if delta is None:
            if self.p < 2:
                vol = self.mesh.total_volume
                delta = 1e-8 * (self.R / vol) ** (1.0 / self.p) / self.mesh.min_spacing
            else:
                delta = 0.0
        if delta < 0:
            raise ValueError(f"grad_reg_delta must be nonnegative, got {delta}")
        object.__setattr__(self, "grad_reg_delta", float(delta))

    @property
    def p_star(self) -> float:
        n = self.mesh.dim
        return self.p * n / (n - self.p)

    @property
    def delta(self) -> float:
        return self.grad_reg_delta

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def describe(self) -> dict:
        return {
            "mesh": self.mesh.describe(),
            "p": self.p,
            "p_star": self.p_star,
            "f": self.f.source,
            "rho": self.f.rho,
            "b": self.f.b,
            "c": self.f.c,
            "R": self.R,
            "grad_reg_delta": self.grad_reg_delta,
            "quad_tol": self.quad_tol,
        }


def antiderivative(f: Nonlinearity, t, x=None, quad_tol: float = DEFAULT_QUAD_TOL) -> np.ndarray:
    """``F(t, x)`` elementwise for arrays ``t`` and coordinate arrays ``x``.

    When ``f`` does not depend on ``x`` the distinct values of ``t`` are sorted
    and only the gaps between neighbours are integrated, with the tolerance
    split in proportion to gap length; ``F`` is then monotone across the
    batch whenever ``f`` is increasing.
    """
    t = np.asarray(t, dtype=float)
    shape = t.shape
    flat = t.ravel()
    if not f.depends_on_x:
        # integrate between consecutive distinct values and accumulate from 0
        knots, inverse = np.unique(np.append(flat, 0.0), return_inverse=True)
        zero = int(inverse[-1])
        lengths = np.diff(knots)
        span = knots[-1] - knots[0]
        tols = quad_tol * lengths / span if span > 0 else quad_tol
        # only wide gaps need the guard against undersampled first panels
        depth = np.where(lengths > span / 16.0, 2, 0) if span > 0 else 0
        pieces = adaptive_simpson(
            lambda s, owner: evaluate(f.ast, s), knots[:-1], knots[1:], tols, min_depth=depth
        )
        vals = np.zeros(knots.size)
        vals[zero + 1:] = np.cumsum(pieces[zero:])
        vals[:zero] = -np.cumsum(pieces[:zero][::-1])[::-1]
        return vals[inverse[:-1]].reshape(shape)
    if x is None:
        raise ValueError(f"{f.source} depends on x; coordinates required")
    xs = [np.broadcast_to(np.asarray(c, dtype=float), shape).ravel() for c in x]

    def integrand(s, owner):
        return evaluate(f.ast, s, [c[owner] for c in xs])

    return adaptive_simpson(integrand, np.zeros_like(flat), flat, quad_tol).reshape(shape)


def eval_F(f: Nonlinearity, t: float, x=(), quad_tol: float = DEFAULT_QUAD_TOL) -> float:
    """Scalar ``F(t, x) = int_0^t f(s, x) ds``."""
    x = [np.asarray([v], dtype=float) for v in x]
    return float(antiderivative(f, np.asarray([t], dtype=float), x or None, quad_tol)[0])


def _f_values(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    return np.asarray(evaluate(spec.f.ast, u, list(spec.mesh.coordinates())), dtype=float)


def eval_B(spec: ProblemSpec, u) -> float:
    u = spec.mesh.check_scalar(u, "u")
    F = antiderivative(spec.f, u, list(spec.mesh.coordinates()), spec.quad_tol)
    return integrate(spec.mesh, F)


def _signed_power(u, q):
    """``|u|^(q-1) u`` without touching ``0^negative``."""
    return np.sign(u) * np.abs(u) ** (q - 1.0)


def eval_I(spec: ProblemSpec, u) -> float:
    mesh = spec.mesh
    u = mesh.check_scalar(u, "u")
    g = gradient(mesh, u)
    sq = np.sum(g * g, axis=0) + spec.delta**2
    w = mesh.volume_weight
    return float(np.sum(sq ** (spec.p / 2.0) * w) + np.sum(spec.a * np.abs(u) ** spec.p * w))


def _flux_weight(spec: ProblemSpec, g: np.ndarray) -> np.ndarray:
    sq = np.sum(g * g, axis=0) + spec.delta**2
    if spec.p < 2 and np.any(sq == 0):
        raise SingularWeightError(
            f"p = {spec.p} < 2 with vanishing gradient and grad_reg_delta = 0; "
            "set a positive grad_reg_delta"
        )
    if spec.p == 2:
        return np.ones_like(sq)
    return sq ** ((spec.p - 2.0) / 2.0)


def p_laplacian(spec: ProblemSpec, u) -> np.ndarray:
    """Nodal ``-div((|grad u|^2 + delta^2)^((p-2)/2) grad u)``."""
    mesh = spec.mesh
    u = mesh.check_scalar(u, "u")
    g = gradient(mesh, u)
    return -divergence(mesh, _flux_weight(spec, g) * g)


def grad_I(spec: ProblemSpec, u) -> np.ndarray:
    u = spec.mesh.check_scalar(u, "u")
    op = p_laplacian(spec, u) + spec.a * _signed_power(u, spec.p)
    return spec.p * op * spec.mesh.volume_weight


def grad_B(spec: ProblemSpec, u) -> np.ndarray:
    u = spec.mesh.check_scalar(u, "u")
    return _f_values(spec, u) * spec.mesh.volume_weight


def _power_change(base, change, q):
    """``(base + change)^q - base^q`` for ``base >= 0``, accurate for small ``change``."""
    out = np.empty_like(base)
    pos = base > 0
    ratio = np.maximum(change[pos] / base[pos], -1.0)
    with np.errstate(divide="ignore"):
        out[pos] = base[pos] ** q * np.expm1(q * np.log1p(ratio))
    out[~pos] = np.maximum(change[~pos], 0.0) ** q
    return out


def energy_change(spec: ProblemSpec, u, v) -> float:
    """``I(v) - I(u)`` computed from the increment, for line-search tests.

    Subtracting two separately rounded energies loses everything once the
    decrease drops below ``eps * I``; this form keeps relative accuracy.
    """
    mesh = spec.mesh
    u = mesh.check_scalar(u, "u")
    v = mesh.check_scalar(v, "v")
    gu = gradient(mesh, u)
    dg = gradient(mesh, v - u)
    base = np.sum(gu * gu, axis=0) + spec.delta**2
    grad_part = _power_change(base, np.sum(dg * (2.0 * gu + dg), axis=0), spec.p / 2.0)
    zero_part = spec.a * _power_change(np.abs(u), np.abs(v) - np.abs(u), spec.p)
    w = mesh.volume_weight
    return float(np.sum(grad_part * w) + np.sum(zero_part * w))


def f_pairing(spec: ProblemSpec, u) -> float:
    """``int u f(u, x) dV``."""
    u = spec.mesh.check_scalar(u, "u")
    return integrate(spec.mesh, u * _f_values(spec, u))


def weak_residual(spec: ProblemSpec, u, lam: float) -> float:
    """Normalized Euler--Lagrange defect tested against every nodal hat function."""
    u = spec.mesh.check_scalar(u, "u")
    if np.any(u < 0):
        raise ValueError(f"weak_residual needs u >= 0, min(u) = {u.min()!r}")
    gI = grad_I(spec, u)
    gB = grad_B(spec, u)
    defect = np.abs(gI / spec.p - lam * gB)
    return float(defect.max() / (1.0 + abs(lam) * np.abs(gB).max()))


@dataclass
class EnergyReport:
    I_value: float
    B_value: float
    gradI: np.ndarray = field(repr=False)
    gradB: np.ndarray = field(repr=False)
    residual: float | None = None
    lam: float | None = None

    def to_dict(self) -> dict:
        out = {"I": self.I_value, "B": self.B_value, "residual": self.residual}
        if self.lam is not None:
            out["lambda"] = self.lam
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def energy_report(spec: ProblemSpec, u, lam: float | None = None) -> EnergyReport:
    u = spec.mesh.check_scalar(u, "u")
    residual = weak_residual(spec, u, lam) if lam is not None else None
    return EnergyReport(eval_I(spec, u), eval_B(spec, u), grad_I(spec, u), grad_B(spec, u), residual, lam)
