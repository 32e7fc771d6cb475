"""
Command line front end.

    plapsolve <mode> --config run.toml [--out DIR] [--seed N]

``mode`` is one of ``solve``, ``continue``, ``verify`` or ``oracle``. The
whole experiment lives in one TOML file:

    p = 2.0
    a_expr = "2 + sin(2*pi*x1)"
    f_expr = "t"
    R = 0.5                  # or: nu = 1.0, giving R = int F(nu, x) dV
    seed = 0
    output_dir = "out"

    [manifold]
    dim = 3
    shape = [8, 8, 8]
    lengths = [1.0, 1.0, 1.0]

    [f_growth]
    rho = 1.0                # or "critical"
    b = 1.0
    c = 0.0

    [solver]                 # optional SolverOptions overrides, plus
    max_iter = 50000         # grad_reg_delta and quad_tol
    [continuation]
    m_schedule = [1, 2, 4, 8, 16, 32]
    [oracle]
    restarts = 3
    budget = 200000
    [verify]
    epsilon = 0.1
    count = 200
    pos_tol = 1e-6

Exit status: 0 when the run converged (and, for ``oracle``, both values
agree), 2 when it did not, 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .continuation import DEFAULT_SCHEDULE, run_continuation
from .expr import ExprError, Nonlinearity, depends_on_t, max_coord_index, parse
from .functional import ProblemSpec, antiderivative, field_from_expr
from .mesh import MeshError, build_torus, integrate, write_field_csv
from .optimizer import (
    InfeasibleError,
    PreconditionError,
    SolverOptions,
    brute_force_minimize,
    constant_level,
    solve_subcritical,
)
from .verify import (
    Claim1Monitor,
    check_claim1_bound,
    check_claim7_diagnostic,
    check_lemma1,
    check_positivity,
    estimate_interpolation_constant,
    sobolev_constants,
)

__all__ = ["ConfigError", "RunConfig", "load_config", "run", "main"]

MODES = ("solve", "continue", "verify", "oracle")
EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 1, 2

_TOP_KEYS = {
    "manifold", "p", "a_expr", "f_expr", "f_growth", "R", "nu", "solver",
    "continuation", "oracle", "verify", "seed", "output_dir",
}
_SPEC_KEYS = {"grad_reg_delta", "quad_tol"}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    dim: int
    shape: list[int]
    lengths: list[float]
    p: float
    a_expr: str
    f_expr: str
    rho: float | str
    b: float
    c: float
    R: float | None
    nu: float | None
    solver: dict = field(default_factory=dict)
    m_schedule: list[int] = field(default_factory=lambda: list(DEFAULT_SCHEDULE))
    oracle: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"
    sha256: str = ""

    @property
    def critical(self) -> bool:
        return self.rho == "critical"


def _require(table: dict, key: str, prefix: str = ""):
    if key not in table:
        raise ConfigError(prefix + key, "missing")
    return table[key]


def _number(value, name: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or (positive and not value > 0):
        raise ConfigError(name, f"expected a {'positive ' if positive else ''}finite number, got {value!r}")
    return value


def _integer(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    return value


def _check_expr(source, name: str, dim: int, allow_t: bool):
    if not isinstance(source, str):
        raise ConfigError(name, f"expected an expression string, got {source!r}")
    try:
        node = parse(source)
    except ExprError as exc:
        raise ConfigError(name, str(exc)) from None
    if not allow_t and depends_on_t(node):
        raise ConfigError(name, "must not depend on t")
    k = max_coord_index(node)
    if k > dim:
        raise ConfigError(name, f"references x{k} on a {dim}-dimensional manifold")
    return node


def _no_extra(table: dict, allowed: set, prefix: str) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"{prefix}.{extra[0]}", "unknown key")


def parse_config(data: dict, sha256: str = "") -> RunConfig:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    man = _require(data, "manifold")
    if not isinstance(man, dict):
        raise ConfigError("manifold", "expected a table")
    _no_extra(man, {"dim", "shape", "lengths"}, "manifold")
    dim = _integer(_require(man, "dim", "manifold."), "manifold.dim")
    shape = _require(man, "shape", "manifold.")
    lengths = man.get("lengths", [1.0] * dim)
    if not isinstance(shape, list) or len(shape) != dim:
        raise ConfigError("manifold.shape", f"expected a list of {dim} integers")
    shape = [_integer(s, "manifold.shape") for s in shape]
    if not isinstance(lengths, list) or len(lengths) != dim:
        raise ConfigError("manifold.lengths", f"expected a list of {dim} numbers")
    lengths = [_number(L, "manifold.lengths", positive=True) for L in lengths]
    try:
        build_torus(dim, shape, lengths)
    except MeshError as exc:
        raise ConfigError("manifold", str(exc)) from None

    p = _number(_require(data, "p"), "p")
    if not 1.0 < p < dim:
        raise ConfigError("p", f"must lie in (1, {dim}), got {p}")
    a_expr = _require(data, "a_expr")
    _check_expr(a_expr, "a_expr", dim, allow_t=False)
    f_expr = _require(data, "f_expr")
    _check_expr(f_expr, "f_expr", dim, allow_t=True)

    growth = _require(data, "f_growth")
    if not isinstance(growth, dict):
        raise ConfigError("f_growth", "expected a table")
    _no_extra(growth, {"rho", "b", "c"}, "f_growth")
    rho = _require(growth, "rho", "f_growth.")
    if isinstance(rho, str):
        if rho != "critical":
            raise ConfigError("f_growth.rho", f"expected a number or 'critical', got {rho!r}")
    else:
        rho = _number(rho, "f_growth.rho", positive=True)
    b = _number(growth.get("b", 1.0), "f_growth.b", positive=True)
    c = _number(growth.get("c", 0.0), "f_growth.c")
    if c < 0:
        raise ConfigError("f_growth.c", f"must be nonnegative, got {c}")

    if ("R" in data) == ("nu" in data):
        raise ConfigError("R", "give exactly one of R or nu")
    R = _number(data["R"], "R", positive=True) if "R" in data else None
    nu = _number(data["nu"], "nu", positive=True) if "nu" in data else None

    solver = data.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("solver", "expected a table")
    opt_names = set(SolverOptions.__dataclass_fields__) | _SPEC_KEYS
    for key in solver:
        if key not in opt_names:
            raise ConfigError(f"solver.{key}", "unknown solver option")

    cont = data.get("continuation", {})
    _no_extra(cont, {"m_schedule"}, "continuation")
    sched = cont.get("m_schedule", list(DEFAULT_SCHEDULE))
    if not isinstance(sched, list) or not all(isinstance(m, int) and not isinstance(m, bool) for m in sched):
        raise ConfigError("continuation.m_schedule", "expected a list of integers")

    oracle = data.get("oracle", {})
    for key in oracle:
        if key not in {"restarts", "budget", "min_step"}:
            raise ConfigError(f"oracle.{key}", "unknown oracle option")
    verify = data.get("verify", {})
    for key in verify:
        if key not in {"epsilon", "count", "pos_tol"}:
            raise ConfigError(f"verify.{key}", "unknown verify option")

    seed = _integer(data.get("seed", 0), "seed")
    out = data.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir", "expected a path string")
    return RunConfig(
        dim, shape, lengths, p, a_expr, f_expr, rho, b, c, R, nu,
        dict(solver), list(sched), dict(oracle), dict(verify), seed, out, sha256,
    )


def load_config(path) -> RunConfig:
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("config", f"{path}: {exc}") from None
    return parse_config(data, hashlib.sha256(raw).hexdigest())


def build_spec(cfg: RunConfig) -> ProblemSpec:
    mesh = build_torus(cfg.dim, cfg.shape, cfg.lengths)
    f = Nonlinearity.from_source(cfg.f_expr, cfg.rho, cfg.b, cfg.c)
    a = field_from_expr(mesh, cfg.a_expr)
    extra = {k: cfg.solver[k] for k in _SPEC_KEYS if k in cfg.solver}
    if cfg.R is not None:
        return ProblemSpec(mesh, cfg.p, a, f, cfg.R, **extra)
    F = antiderivative(f, mesh.constant(cfg.nu), list(mesh.coordinates()), extra.get("quad_tol", 1e-10))
    R = integrate(mesh, F)
    return ProblemSpec(mesh, cfg.p, a, f, R, **extra)


def solver_options(cfg: RunConfig) -> SolverOptions:
    opts = {k: v for k, v in cfg.solver.items() if k not in _SPEC_KEYS}
    opts.setdefault("seed", cfg.seed)
    try:
        return SolverOptions.from_dict(opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError("solver", str(exc)) from None


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------


def _clean(obj):
    """Make a payload JSON-safe: numpy scalars to Python, non-finite to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n")


def _write_trace_csv(path: Path, rows: list[dict], columns: list[str], comment: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(row[c])) if isinstance(row[c], float) else row[c] for c in columns])


PLOT_TEMPLATE = '''"""Plots for a plapsolve {mode} run ({stamp}). Needs matplotlib."""
import csv
import sys

import matplotlib.pyplot as plt


def read(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


trace = read("trace.csv")
field = read("u.csv")
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
ax1.plot([float(r["{xcol}"]) for r in trace], [float(r["{ycol}"]) for r in trace], "o-")
ax1.set_xlabel("{xcol}")
ax1.set_ylabel("{ycol}")
ax1.set_xscale("{xscale}")
ax2.hist([float(r["value"]) for r in field], bins=30)
ax2.set_xlabel("u")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{mode}.png", dpi=120)
'''


def _stamp(cfg: RunConfig) -> str:
    return f"config_sha256={cfg.sha256} seed={cfg.seed} plapsolve={__version__}"


def _write_plot(out: Path, cfg: RunConfig, mode: str, xcol: str, ycol: str, xscale: str) -> None:
    (out / "plot.py").write_text(
        PLOT_TEMPLATE.format(mode=mode, stamp=_stamp(cfg), xcol=xcol, ycol=ycol, xscale=xscale)
    )


def _header(cfg: RunConfig, mode: str, spec: ProblemSpec) -> dict:
    return {
        "mode": mode,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "version": __version__,
        "problem": spec.describe(),
    }


def _solve_outputs(out: Path, cfg: RunConfig, spec: ProblemSpec, result, mode: str) -> None:
    write_field_csv(out / "u.csv", spec.mesh, result.u, comment=_stamp(cfg))
    rows = [r.to_dict() for r in result.trace]
    _write_trace_csv(out / "trace.csv", rows, ["iter", "I", "B", "step", "kind"], _stamp(cfg))
    _write_plot(out, cfg, mode, "iter", "I", "linear")


# --------------------------------------------------------------------------
# modes
# --------------------------------------------------------------------------


def _require_subcritical(cfg: RunConfig, spec: ProblemSpec, mode: str) -> None:
    if cfg.critical:
        raise ConfigError("f_growth.rho", f"mode '{mode}' needs a subcritical rho, got 'critical'")
    if cfg.rho >= spec.p_star - 1.0:
        raise ConfigError(
            "f_growth.rho", f"mode '{mode}' needs rho < p* - 1 = {spec.p_star - 1.0}, got {cfg.rho}"
        )


def _mode_solve(cfg, spec, out) -> int:
    _require_subcritical(cfg, spec, "solve")
    result = solve_subcritical(spec, options=solver_options(cfg))
    payload = _header(cfg, "solve", spec)
    payload["result"] = result.to_dict()
    _write_json(out / "result.json", payload)
    _solve_outputs(out, cfg, spec, result, "solve")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _mode_continue(cfg, spec, out) -> int:
    if not cfg.critical:
        raise ConfigError("f_growth.rho", f"mode 'continue' needs rho = 'critical', got {cfg.rho!r}")
    trace = run_continuation(spec, cfg.m_schedule, solver_options(cfg))
    payload = _header(cfg, "continue", spec)
    payload["continuation"] = trace.to_dict()
    _write_json(out / "result.json", payload)
    if trace.final is not None:
        write_field_csv(out / "u.csv", spec.mesh, trace.final.u, comment=_stamp(cfg))
    rows = [r.to_dict() for r in trace.rows]
    cols = ["m", "Rm", "mu", "lambda", "l1", "gradp", "lambdaRm", "residual", "status", "iterations", "dual_norm"]
    _write_trace_csv(out / "trace.csv", rows, cols, _stamp(cfg))
    _write_plot(out, cfg, "continue", "m", "lambdaRm", "log")
    ok = trace.status == "completed" and trace.final is not None and trace.final.converged
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _mode_oracle(cfg, spec, out) -> int:
    _require_subcritical(cfg, spec, "oracle")
    if spec.mesh.num_nodes > 200:
        raise ConfigError("manifold.shape", f"oracle mode is limited to 200 nodes, got {spec.mesh.num_nodes}")
    result = solve_subcritical(spec, options=solver_options(cfg))
    oracle = brute_force_minimize(
        spec,
        restarts=cfg.oracle.get("restarts", 3),
        budget=cfg.oracle.get("budget", 200_000),
        seed=cfg.seed,
        min_step=cfg.oracle.get("min_step"),
    )
    gap = abs(result.mu - oracle.mu)
    allowed = max(1e-4, 1e-3 * abs(oracle.mu))
    payload = _header(cfg, "oracle", spec)
    payload["solver"] = result.to_dict()
    payload["oracle"] = oracle.to_dict(include_trace=False)
    payload["gap"] = {"mu_solver": result.mu, "mu_oracle": oracle.mu, "abs": gap, "allowed": allowed, "agree": gap <= allowed}
    _write_json(out / "result.json", payload)
    _solve_outputs(out, cfg, spec, result, "oracle")
    return EXIT_OK if result.converged and gap <= allowed else EXIT_NOT_CONVERGED


def _mode_verify(cfg, spec, out) -> int:
    mesh = spec.mesh
    opts = solver_options(cfg)
    eps = float(cfg.verify.get("epsilon", 0.1))
    count = int(cfg.verify.get("count", 200))
    pos_tol = float(cfg.verify.get("pos_tol", 1e-6))
    x = mesh.coordinates().reshape(mesh.dim, -1).T
    reports = {
        "lemma1": check_lemma1(spec.f, x_samples=x[:: max(1, len(x) // 27)], quad_tol=spec.quad_tol, dim=mesh.dim),
        "interpolation": estimate_interpolation_constant(mesh, spec.p, eps, count=count, seed=cfg.seed),
        "sobolev": sobolev_constants(mesh, spec.p, count=count, seed=cfg.seed),
    }
    t0 = 0.5 * constant_level(spec)
    monitor = Claim1Monitor(t0)
    converged = True
    if cfg.critical:
        trace = run_continuation(spec, cfg.m_schedule, opts, callback=monitor)
        K = reports["sobolev"].parameters["K"]
        reports["claim7"] = check_claim7_diagnostic(trace, K, spec.f.c, spec.p, spec.p_star)
        final = trace.final
        converged = trace.status == "completed" and final is not None and final.converged
    else:
        _require_subcritical(cfg, spec, "verify")
        final = solve_subcritical(spec, options=opts, callback=monitor)
        converged = final.converged
        reports["claim1"] = check_claim1_bound(spec, final.u, t0)
    reports["claim1_streamed"] = monitor.report()
    if final is not None and final.converged:
        reports["positivity"] = check_positivity(final, pos_tol)
    header = _header(cfg, "verify", spec)
    for name, rep in reports.items():
        _write_json(out / f"verify_{name}.json", {**header, "report": rep.to_dict()})
    hard = [name for name, rep in reports.items() if name != "claim7" and rep.status == "fails"]
    summary = {**header, "verdicts": {k: r.status for k, r in reports.items()}, "converged": converged, "failed": hard}
    if final is not None:
        summary["result"] = final.to_dict()
        _solve_outputs(out, cfg, spec, final, "verify")
    _write_json(out / "result.json", summary)
    return EXIT_OK if converged and not hard else EXIT_NOT_CONVERGED


_DISPATCH = {"solve": _mode_solve, "continue": _mode_continue, "verify": _mode_verify, "oracle": _mode_oracle}


def run(cfg: RunConfig, mode: str, out_dir=None) -> int:
    """Execute ``mode`` and write its artifacts; return the exit status."""
    if mode not in MODES:
        raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
    try:
        spec = build_spec(cfg)
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError("problem", str(exc)) from None
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _DISPATCH[mode](cfg, spec, out)
    except PreconditionError as exc:
        raise ConfigError("f_expr", str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, (ConfigError, InfeasibleError)):
            raise
        raise ConfigError("config", str(exc)) from None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plapsolve", description="p-Laplacian constrained minimization")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return run(cfg, args.mode, args.out)
    except ConfigError as exc:
        print(f"plapsolve: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"plapsolve: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleError, ArithmeticError) as exc:
        print(f"plapsolve: run failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
