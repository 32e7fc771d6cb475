import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_spec
from plapsolve.functional import eval_B, eval_I, f_pairing
from plapsolve.optimizer import (
    InfeasibleError,
    PreconditionError,
    SolverOptions,
    brute_force_minimize,
    constant_level,
    extract_lambda,
    find_scaling,
    lambda_least_squares,
    project_to_constraint,
    solve_subcritical,
)


# -- projection ----------------------------------------------------------------


def test_projection_closed_forms():
    spec = make_spec(N=4, R=2.0)
    k, B = find_scaling(spec, spec.mesh.constant(1.0))
    assert k == pytest.approx(math.sqrt(2 * 2.0), rel=1e-12)
    assert abs(B - 2.0) <= 1e-10 * 2.0
    spec = make_spec(N=4, f="t^3", R=1.0, rho=3.0)
    u = project_to_constraint(spec, spec.mesh.constant(1.0))
    assert np.allclose(u, 4.0**0.25, rtol=1e-12, atol=0)


def test_projection_rejects_zero_and_negative():
    spec = make_spec(N=4)
    with pytest.raises(InfeasibleError):
        project_to_constraint(spec, np.zeros(spec.mesh.shape))
    with pytest.raises(ValueError):
        project_to_constraint(spec, -spec.mesh.constant(1.0))


def test_projection_reports_slow_growth():
    spec = make_spec(N=4, f="t*exp(-t^2)", R=10.0, rho=0.5)
    with pytest.raises(InfeasibleError, match="1e12"):
        find_scaling(spec, spec.mesh.constant(1.0))


@given(st.integers(0, 10_000), st.floats(0.01, 50.0), st.sampled_from(["t", "t^3", "t + sin(t)", "sign(t)*abs(t)^1.5"]))
def test_projection_lands_on_constraint(seed, R, f):
    spec = make_spec(N=3, f=f, R=R, rho=3.0)
    u = np.random.default_rng(seed).uniform(0, 3, spec.mesh.shape)
    u.flat[0] = 0.5
    k, B = find_scaling(spec, u)
    assert k > 0
    assert abs(eval_B(spec, k * u) - R) <= 1e-10 * R


def test_constant_level():
    assert constant_level(make_spec(N=4, R=0.5)) == pytest.approx(1.0, rel=1e-12)


# -- solver --------------------------------------------------------------------


def _check_invariants(spec, res, opts=SolverOptions()):
    ctol = 1e-10 * spec.R
    assert abs(res.B - spec.R) <= ctol
    assert res.u.min() >= -opts.clip_tol
    Is = [row.I for row in res.trace if row.kind == "step"]
    starts = [row.I for row in res.trace if row.kind != "step"]
    assert all(b <= a for a, b in zip(Is, Is[1:]))
    if not any(row.kind == "restart" for row in res.trace):
        assert all(I <= starts[0] for I in Is)
    for row in res.trace:
        assert abs(row.B - spec.R) <= ctol


def test_constant_exact_case():
    spec = make_spec(N=8, a="2")
    res = solve_subcritical(spec)
    assert res.converged
    assert res.lam == pytest.approx(2.0, abs=1e-10)
    assert res.mu == pytest.approx(2.0, abs=1e-10)
    assert np.ptp(res.u) <= 1e-8 and res.u.mean() == pytest.approx(1.0, rel=1e-10)
    assert res.residual < 1e-8


def test_cubic_constant_case():
    spec = make_spec(N=8, a="1", f="t^3", R=0.25, rho=3.0)
    res = solve_subcritical(spec)
    assert res.converged
    assert np.allclose(res.u, 1.0, rtol=1e-8)
    assert res.lam == pytest.approx(1.0, rel=1e-8)


def test_constant_start_is_not_optimal_for_varying_a():
    spec = make_spec(N=8, a="2 + sin(2*pi*x1)")
    res = solve_subcritical(spec)
    assert res.converged
    assert res.mu < eval_I(spec, spec.mesh.constant(constant_level(spec))) - 1e-4
    _check_invariants(spec, res)
    small = make_spec(N=4, a="2 + sin(2*pi*x1)")
    fast = solve_subcritical(small)
    oracle = brute_force_minimize(small, restarts=2, seed=3)
    assert abs(fast.mu - oracle.mu) <= 1e-4


def test_random_start_invariants(rng):
    spec = make_spec(N=6, p=2.5, a="1 + 0.5*cos(2*pi*x2)", f="t + t^3", rho=3.0)
    u0 = rng.uniform(0.1, 2.0, spec.mesh.shape)
    seen = []
    res = solve_subcritical(spec, u0, callback=lambda s, u: seen.append(eval_I(s, u)))
    assert res.converged
    _check_invariants(spec, res)
    assert len(seen) == len([r for r in res.trace if r.kind != "restart"])
    assert abs(res.mu - res.lam * f_pairing(spec, res.u)) <= 1e-8 * (1 + abs(res.mu))


def test_multiplier_cross_check():
    spec = make_spec(N=6, a="2 + sin(2*pi*x1)*cos(2*pi*x3)", f="t + 0.5*t^3", rho=3.0)
    res = solve_subcritical(spec)
    assert res.converged
    assert lambda_least_squares(spec, res.u) == pytest.approx(extract_lambda(spec, res.u), rel=1e-6)


def test_extract_lambda_errors():
    spec = make_spec(N=4)
    with pytest.raises(ValueError):
        extract_lambda(spec, np.zeros(spec.mesh.shape))
    assert extract_lambda(make_spec(N=4, a="2"), np.ones((4, 4, 4))) == pytest.approx(2.0, abs=1e-10)


def test_solver_preconditions():
    with pytest.raises(PreconditionError, match="continuation"):
        solve_subcritical(make_spec(N=4, f="t + abs(t)^4*t", rho="critical", c=2.0))
    with pytest.raises(PreconditionError):
        solve_subcritical(make_spec(N=4, f="t^2", rho=2.0))
    spec = make_spec(N=4)
    with pytest.raises(InfeasibleError):
        solve_subcritical(spec, np.zeros(spec.mesh.shape))
    bad = spec.mesh.constant(1.0)
    bad.flat[3] = -0.1
    with pytest.raises(InfeasibleError):
        solve_subcritical(spec, bad)


def test_max_iter_status(rng):
    spec = make_spec(N=6, a="2 + sin(2*pi*x1)")
    res = solve_subcritical(spec, rng.uniform(0.5, 1.5, spec.mesh.shape), SolverOptions(max_iter=2))
    assert res.status == "max_iter"
    assert res.iterations == 2


def test_small_p_delta_insensitive():
    vals = []
    for delta in (1e-6, 1e-7):
        spec = make_spec(N=4, p=1.5, a="1 + 0.5*sin(2*pi*x1)", grad_reg_delta=delta)
        vals.append(solve_subcritical(spec).mu)
    assert abs(vals[0] - vals[1]) <= 1e-4 * abs(vals[0])


def test_solver_is_deterministic():
    spec = make_spec(N=4, a="2 + sin(2*pi*x1)")
    a = solve_subcritical(spec, options=SolverOptions(seed=4))
    b = solve_subcritical(spec, options=SolverOptions(seed=4))
    assert a.to_json() == b.to_json()


def test_options_from_dict():
    assert SolverOptions.from_dict({"max_iter": 5}).max_iter == 5
    with pytest.raises(ValueError, match="bogus"):
        SolverOptions.from_dict({"bogus": 1})


def test_result_json_layout():
    res = solve_subcritical(make_spec(N=4, a="2"))
    d = res.to_dict()
    for key in ("lambda", "mu", "iterations", "residual", "status", "trace"):
        assert key in d
    assert set(d["trace"][0]) == {"iter", "I", "B", "step", "kind"}


# -- brute force -----------------------------------------------------------------


def test_oracle_constant_case():
    spec = make_spec(N=4, a="2")
    res = brute_force_minimize(spec, restarts=2, seed=1)
    assert abs(res.mu - 2.0 * 2 * 0.5) <= 1e-6
    assert abs(res.B - 0.5) <= 1e-10 * 0.5
    assert res.u.min() >= 0


def test_oracle_guards():
    with pytest.raises(ValueError):
        brute_force_minimize(make_spec(N=4), restarts=0)
    with pytest.raises(ValueError, match="200"):
        brute_force_minimize(make_spec(N=6))
    with pytest.raises(ValueError):
        brute_force_minimize(make_spec(N=3), budget=0)


@settings(max_examples=5)
@given(st.integers(0, 1000))
def test_oracle_never_beats_feasible_bound(seed):
    spec = make_spec(N=3, a="1 + x1*x2", f="t + t^3", rho=3.0)
    res = brute_force_minimize(spec, restarts=1, budget=4000, seed=seed)
    assert abs(eval_B(spec, res.u) - spec.R) <= 1e-10 * spec.R
    assert res.mu == pytest.approx(eval_I(spec, res.u), rel=1e-12)
