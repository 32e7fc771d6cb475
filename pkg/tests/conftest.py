import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plapsolve.expr import Nonlinearity
from plapsolve.functional import ProblemSpec, field_from_expr
from plapsolve.mesh import build_torus

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def unit_t3():
    return lambda N: build_torus(3, [N] * 3, [1.0] * 3)


def make_spec(N=4, p=2.0, a="2", f="t", R=0.5, rho=1.0, b=1.0, c=0.0, dim=3, **kw):
    mesh = build_torus(dim, [N] * dim, [1.0] * dim)
    return ProblemSpec(mesh, p, field_from_expr(mesh, a), Nonlinearity.from_source(f, rho, b, c), R, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_T_TERMS = ["t", "t^3", "t^5", "sign(t)*abs(t)^{q}", "t*exp({s}*t^2)", "t + {s}*sin(t)"]


def random_odd_increasing(seed, dim=3):
    """Seeded source of a sum of positive x-weights times odd increasing terms in t."""
    rng = np.random.default_rng(seed)
    parts = []
    for _ in range(rng.integers(1, 4)):
        term = _T_TERMS[rng.integers(len(_T_TERMS))].format(
            q=round(float(rng.uniform(0.3, 3.0)), 3), s=round(float(rng.uniform(0.05, 0.5)), 3)
        )
        coef = round(float(rng.uniform(0.2, 2.0)), 3)
        if rng.uniform() < 0.5:
            j = int(rng.integers(1, dim + 1))
            alpha = round(float(rng.uniform(0.1, 0.9)), 3)
            weight = f"{coef}*(1 + {alpha}*cos(2*pi*x{j}))"
        else:
            weight = f"{coef}"
        parts.append(f"{weight}*({term})")
    return " + ".join(parts)


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {cid}: {detail}")
