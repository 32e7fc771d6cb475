import numpy as np
import pytest

from conftest import make_spec
from plapsolve.expr import Nonlinearity, check_p1, default_t_samples, default_x_samples
from plapsolve.continuation import (
    DEFAULT_SCHEDULE,
    compute_nu,
    compute_Rm,
    make_fm,
    run_continuation,
)
from plapsolve.optimizer import PreconditionError

CRIT = "t + abs(t)^4*t"


def nl(src, **kw):
    return Nonlinearity.from_source(src, **kw)


def test_make_fm_examples():
    f1 = make_fm(nl("t"), 1)
    assert f1(4.0) == pytest.approx(2.0, rel=1e-15)
    f3 = make_fm(nl(CRIT, rho="critical", c=1.0), 3, p_star=6.0)
    assert f3(1.0) == pytest.approx(2.0**0.75, rel=1e-14)
    assert f3.rho == pytest.approx(0.75 * 5.0)
    for m in (1, 5, 40):
        assert make_fm(nl("t*exp(t^2)", rho=9.0), m)(0.0) == 0.0


def test_make_fm_errors():
    with pytest.raises(ValueError):
        make_fm(nl("t"), 0)
    with pytest.raises(ValueError, match="p_star"):
        make_fm(nl(CRIT, rho="critical"), 2)


@pytest.mark.parametrize("src", ["t", CRIT, "t*(2 + sin(2*pi*x1))", "t + t^3"])
def test_fm_keeps_p1(src):
    f = nl(src, rho=3.0)
    x = default_x_samples(3)
    for m in DEFAULT_SCHEDULE:
        assert check_p1(make_fm(f, m), default_t_samples(), x).verdict


def test_compute_nu_examples():
    assert compute_nu(make_spec(N=4, R=0.5)) == pytest.approx(1.0, rel=1e-12)
    assert compute_nu(make_spec(N=4, f="t^3", R=4.0, rho=3.0)) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValueError):
        make_spec(N=4, R=0.0)


@pytest.mark.parametrize("m", [1, 2, 4, 8, 32])
def test_compute_Rm_closed_form(m):
    spec = make_spec(N=4, R=0.5)
    assert abs(compute_Rm(spec, m, 1.0) - (m + 1) / (2 * m + 1)) <= 1e-10


def test_Rm_bound_and_limit():
    spec = make_spec(N=4, f="t*(2 + sin(2*pi*x1)) + t^3", R=0.3, rho=3.0)
    nu = compute_nu(spec)
    Rm = [compute_Rm(spec, m, nu) for m in (1, 4, 64, 4096)]
    assert all(r <= nu * spec.mesh.total_volume + spec.R + 1e-10 for r in Rm)
    gaps = [abs(r - spec.R) for r in Rm]
    assert gaps == sorted(gaps, reverse=True)
    assert gaps[-1] < 1e-3


def _critical(N=6, **kw):
    return make_spec(N=N, f=CRIT, rho="critical", b=1.0, c=2.0, R=2.0 / 3.0, a="1", **kw)


def test_preconditions_before_solving():
    with pytest.raises(PreconditionError) as info:
        run_continuation(make_spec(N=4, f="abs(t)^4*t", rho="critical", c=1.0, R=0.2))
    assert any(r.condition == "p4" for r in info.value.reports)
    with pytest.raises(ValueError, match="at least 3"):
        run_continuation(_critical(), [1])
    with pytest.raises(ValueError, match="increasing"):
        run_continuation(_critical(), [1, 4, 2])
    with pytest.raises(PreconditionError, match="critical"):
        run_continuation(make_spec(N=4))


def test_critical_instance_trace():
    spec = _critical()
    trace = run_continuation(spec)
    assert trace.status == "completed"
    assert [r.m for r in trace.rows] == list(DEFAULT_SCHEDULE)
    assert trace.nu == pytest.approx(1.0, rel=1e-10)
    assert all(r.Rm <= trace.rm_bound + 1e-10 for r in trace.rows)
    assert abs(trace.rows[-1].Rm - spec.R) < abs(trace.rows[0].Rm - spec.R)
    lr = [r.lambdaRm for r in trace.rows]
    assert max(lr) <= 10 * lr[0]
    assert trace.final.residual < 10 * 1e-8
    d = trace.to_dict()
    assert set(d["rows"][0]) >= {"m", "Rm", "mu", "lambda", "l1", "gradp", "lambdaRm"}


def test_nonconstant_a_warm_starts(tmp_path):
    spec = make_spec(N=4, f=CRIT, rho="critical", b=1.0, c=2.0, R=0.5, a="1 + 0.5*sin(2*pi*x1)")
    trace = run_continuation(spec, [1, 2, 4])
    assert trace.status == "completed"
    assert all(r.status == "converged" for r in trace.rows)
    assert trace.final.u.min() > 0
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("m,Rm,mu,lambda")
    assert len(lines) == 4
