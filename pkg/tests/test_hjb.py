import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from explosive_mfg import (DomainSpec, ExplosiveHJB, HJBProblem, build_domain,
                           drift_from_value, fit_boundary_asymptotics, solve_discounted,
                           solve_ergodic)
from explosive_mfg.exceptions import ConfigurationError
from explosive_mfg.hjb import (drift_limit, drift_map, exact_rho_interval, gradient_limit,
                               neville, profile_exponent, profile_prefactor, residual,
                               sin_profile)


def test_closed_form_constants():
    assert profile_exponent(1.5) == pytest.approx(-1.0)
    assert profile_prefactor(1.5) == pytest.approx(4.0)
    assert gradient_limit(1.5) == pytest.approx(4.0)
    assert drift_limit(1.5) == pytest.approx(3.0)
    assert profile_exponent(1.25) == pytest.approx(-3.0)
    assert gradient_limit(1.25) == pytest.approx(256.0)
    assert drift_limit(1.25) == pytest.approx(5.0)
    assert drift_limit(2.0) == pytest.approx(2.0)


def test_discounted_symmetric(dom128):
    u = solve_discounted(HJBProblem(dom128, 1.5), 1.0).values
    assert np.max(np.abs(u - u[::-1])) < 1e-9 * np.max(np.abs(u))


def test_discount_levels_cauchy(dom128):
    prob = HJBProblem(dom128, 1.5)
    levels = [solve_discounted(prob, lam).values[prob.x0] * lam for lam in (1e-1, 1e-2, 1e-3)]
    assert abs(levels[2] - levels[1]) < abs(levels[1] - levels[0])


def test_ergodic_matches_exact_1d(value15):
    assert value15.rho == pytest.approx(exact_rho_interval(1.5), rel=2e-3)


def test_ergodic_q2_matches_pi_squared(value2):
    assert value2.rho == pytest.approx(np.pi ** 2, rel=5e-3)


def test_residual_small(value15):
    dom = value15.domain
    r = residual(value15)
    inner = dom.subdomain_mask(2 * dom.h)
    scale = np.abs(value15.gradient()[:, 0]) ** 1.5 + 1.0
    assert np.max(np.abs(r[inner]) / scale[inner]) < 1e-8


def test_shift_invariance(dom128, value15_coarse):
    other = solve_ergodic(HJBProblem(dom128, 1.5, np.full(dom128.n_nodes, 2.5)))
    assert other.rho - value15_coarse.rho == pytest.approx(2.5, abs=1e-8)
    assert np.max(np.abs(other.u.values - value15_coarse.u.values)) < 1e-8


def test_gradient_bound_does_not_grow():
    consts = []
    for n in (128, 256, 512):
        sol = solve_ergodic(HJBProblem(build_domain(DomainSpec(resolution=n)), 1.5))
        consts.append(sol.gradient_bound_constant())
    assert max(consts) <= 1.05 * consts[0]


def test_manufactured_drift_q2(dom128):
    x = dom128.nodes[:, 0]
    b = drift_from_value(dom128, u=x ** 2, q=2.0)
    i = dom128.nearest_node(0.25)
    assert b.b[i, 0] == pytest.approx(4 * x[i])


def test_asymptotics_q15(value15):
    rep = fit_boundary_asymptotics(value15)
    errs = rep.relative_errors()
    assert errs["exponent"] < 0.05
    assert all(v < 0.1 for v in errs.values())


def test_too_few_bands():
    sol = solve_ergodic(HJBProblem(build_domain(DomainSpec(resolution=32, epsilon0=0.2)), 1.5))
    with pytest.raises(ConfigurationError, match="node bands"):
        fit_boundary_asymptotics(sol)


def test_invalid_q(dom128):
    with pytest.raises(ConfigurationError):
        HJBProblem(dom128, 2.5)


def test_neville_exact_on_polynomials():
    xs = [1.0, 0.5, 0.25, 0.125]
    assert neville(xs, [3 + 2 * x - x ** 3 for x in xs]) == pytest.approx(3.0)


def test_estimator_api(dom128):
    est = ExplosiveHJB(q=2.0).fit(dom128, g=sin_profile(dom128, 1.0))
    assert est.get_params()["q"] == 2.0
    assert est.predict([0.5])[0] == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.01, 2.0), st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_drift_map_properties(q, p):
    p = np.array([p])
    b = drift_map(p, q)
    n = np.linalg.norm(p)
    if n >= 1e-12:
        assert np.linalg.norm(b) == pytest.approx(q * n ** (q - 1), rel=1e-10)
        assert float(np.sum(b * p)) >= 0
    else:
        assert np.all(b == 0)
