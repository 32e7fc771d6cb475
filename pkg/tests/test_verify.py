import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_spec, random_odd_increasing
from plapsolve.continuation import ContinuationRow, ContinuationTrace
from plapsolve.expr import Nonlinearity, check_p1, default_t_samples, default_x_samples
from plapsolve.mesh import build_torus
from plapsolve.optimizer import SolveResult, SolverOptions, solve_subcritical
from plapsolve.verify import (
    LABEL,
    Claim1Monitor,
    check_claim1_bound,
    check_claim7_diagnostic,
    check_lemma1,
    check_positivity,
    claim1_bound,
    estimate_interpolation_constant,
    sample_fields,
    sobolev_constants,
)


@pytest.fixture
def mesh8():
    return build_torus(3, [8, 8, 8], [1.0, 1.0, 1.0])


# -- samples -------------------------------------------------------------------


def test_samples_are_seeded(mesh8):
    a = sample_fields(mesh8, 12, seed=3)
    b = sample_fields(mesh8, 12, seed=3)
    c = sample_fields(mesh8, 12, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))
    assert all(x.shape == mesh8.shape for x in a)
    with pytest.raises(ValueError):
        sample_fields(mesh8, 0)
    with pytest.raises(ValueError):
        sample_fields(mesh8, 3, families=("noise",))


# -- interpolation and Sobolev constants -------------------------------------------


def test_interpolation_constants_only(mesh8):
    rep = estimate_interpolation_constant(mesh8, 2.0, 0.1, samples=sample_fields(mesh8, 10, families=("constant",)))
    assert rep.parameters["C_epsilon"] == pytest.approx(1.0, rel=1e-12)
    assert rep.label == LABEL


def test_interpolation_monotone_in_epsilon(mesh8):
    fields = sample_fields(mesh8, 40, seed=2)
    Cs = [estimate_interpolation_constant(mesh8, 2.0, eps, samples=fields).parameters["C_epsilon"] for eps in (0.05, 0.1, 0.2, 0.4)]
    assert all(b <= a for a, b in zip(Cs, Cs[1:]))


def test_interpolation_validates(mesh8):
    rep = estimate_interpolation_constant(mesh8, 2.0, 0.1, count=200, seed=0)
    assert np.isfinite(rep.parameters["C_epsilon"])
    assert rep.holds and rep.details["violations"] == 0
    assert rep.details["validation_seed"] != rep.seed
    assert rep.lhs_max <= rep.rhs_min + rep.tolerance


def test_interpolation_errors(mesh8):
    with pytest.raises(ValueError):
        estimate_interpolation_constant(mesh8, 2.0, 0.0)
    with pytest.raises(ValueError, match="zero"):
        estimate_interpolation_constant(mesh8, 2.0, 0.1, samples=[np.zeros(mesh8.shape)])


def test_sobolev_constants_on_constants():
    mesh = build_torus(3, [4, 4, 4], [2.0, 1.0, 1.0])
    rep = sobolev_constants(mesh, 2.0, samples=sample_fields(mesh, 6, families=("constant",)))
    p_star = 6.0
    expected = mesh.total_volume ** (2.0 / p_star - 1.0)
    assert rep.parameters["K"] == pytest.approx(0.0, abs=1e-12)
    assert rep.parameters["D"] == pytest.approx(expected, rel=1e-9)


def test_sobolev_constants_validate(mesh8):
    rep = sobolev_constants(mesh8, 2.0, count=200, seed=0)
    assert rep.holds and rep.details["violations"] == 0
    assert rep.parameters["K"] >= 0 and rep.parameters["D"] >= 0
    again = sobolev_constants(mesh8, 2.0, count=200, seed=0)
    assert rep.to_json() == again.to_json()


def test_sobolev_errors(mesh8):
    with pytest.raises(ValueError):
        sobolev_constants(mesh8, 3.0)
    with pytest.raises(ValueError):
        sobolev_constants(mesh8, 2.0, samples=[np.zeros(mesh8.shape)])


# -- L1 bound --------------------------------------------------------------------


def test_claim1_example():
    spec = make_spec(N=4, R=0.5)
    assert claim1_bound(spec, 0.5) == pytest.approx((0.5, 2.0))
    rep = check_claim1_bound(spec, spec.mesh.constant(1.0), t0=0.5)
    assert rep.holds and rep.lhs_max == pytest.approx(1.0)
    assert rep.rhs_min == pytest.approx(2.0)


def test_claim1_errors():
    spec = make_spec(N=4, R=0.5)
    with pytest.raises(ValueError, match="t0"):
        claim1_bound(spec, 0.0)
    with pytest.raises(ValueError, match="feasible"):
        check_claim1_bound(spec, spec.mesh.constant(2.0))


def test_claim1_streamed_over_a_solve(rng):
    spec = make_spec(N=6, a="2 + sin(2*pi*x1)", f="t + t^3", rho=3.0)
    mon = Claim1Monitor(t0=0.3)
    res = solve_subcritical(spec, rng.uniform(0.2, 2.0, spec.mesh.shape), callback=mon)
    assert res.converged
    assert mon.count == res.iterations + 1 + res.restarts
    assert mon.holds
    rep = mon.report()
    assert rep.holds and rep.details["iterates"] == mon.count


# -- nondegeneracy diagnostic, positivity -----------------------------------------


def _trace(mus):
    rows = [ContinuationRow(m, 0.5, mu, 1.0, 1.0, 0.0, 0.5, 0.0, "converged", 0, 0.0) for m, mu in zip((1, 2, 4), mus)]
    return ContinuationTrace(1.0, 0.5, 1.0, rows)


def test_claim7_paths():
    rep = check_claim7_diagnostic(_trace([-1.0, -0.5, 0.0]), K=2.0, c1=1.0, p=2.0, p_star=6.0)
    assert rep.holds
    rep = check_claim7_diagnostic(_trace([1.0, 1.0, 1.0]), K=0.1, c1=1.0, p=2.0, p_star=6.0)
    assert rep.details["margin"] == pytest.approx((0.5 * 6.0) ** (1 / 3) - 0.1)
    assert rep.holds
    bad = check_claim7_diagnostic(_trace([1.0, 9.0, 1.0]), K=1.0, c1=1.0, p=2.0, p_star=6.0)
    assert not bad.holds and bad.details["margin"] < 0 and bad.witness["m"] == 2
    na = check_claim7_diagnostic(_trace([1.0, 1.0, 1.0]), K=1.0, c1=0.0, p=2.0, p_star=6.0)
    assert na.status == "not-applicable"
    with pytest.raises(ValueError):
        check_claim7_diagnostic(_trace([]), K=1.0, c1=1.0, p=2.0, p_star=6.0)


def test_positivity():
    res = solve_subcritical(make_spec(N=4, a="2"))
    assert check_positivity(res).holds
    neg = SolveResult(u=np.ones(3), lam=-1.0, mu=1.0, iterations=0, residual=0.0, status="converged")
    assert check_positivity(neg).status == "not-applicable"
    with pytest.raises(ValueError):
        check_positivity(SolveResult(u=np.ones(3), lam=1.0, mu=1.0, iterations=0, residual=0.0, status="max_iter"))


def test_positivity_sinusoidal_a():
    res = solve_subcritical(make_spec(N=8, a="2 + sin(2*pi*x1)"))
    rep = check_positivity(res)
    assert res.lam >= 0 and rep.holds
    assert rep.witness["min_u"] > 1e-6


def test_report_json_round_trip():
    rep = check_claim1_bound(make_spec(N=4), np.ones((4, 4, 4)), t0=0.5)
    d = json.loads(rep.to_json())
    assert d["label"] == LABEL
    assert d["holds"] is True and d["status"] == "holds"


# -- antiderivative audit -----------------------------------------------------------


@pytest.mark.parametrize("src", ["t", "t + abs(t)^4*t", "t*exp(t^2)", "(2 + sin(2*pi*x1))*t"])
def test_lemma1_examples(src):
    rep = check_lemma1(Nonlinearity.from_source(src))
    assert rep.holds, rep.details


def test_lemma1_flags_a_bounded_antiderivative():
    rep = check_lemma1(Nonlinearity.from_source("t*exp(-t^2)"))
    assert not rep.holds
    assert rep.details["violations"]["ii_unbounded"] == 1


@settings(max_examples=15)
@given(st.integers(0, 2**31))
def test_lemma1_holds_for_odd_increasing(seed):
    f = Nonlinearity.from_source(random_odd_increasing(seed))
    assert check_p1(f, default_t_samples(), default_x_samples(3)).verdict
    rep = check_lemma1(f, quad_tol=1e-10)
    assert rep.holds, (f.source, rep.details)
