import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from explosive_mfg import (DomainSpec, DriftField, FokkerPlanck, LyapunovSpec, build_domain,
                           drift_from_value, lyapunov_certificate, solve_kfp_neumann,
                           solve_kfp_whole, weighted_norm)
from explosive_mfg.exceptions import ConfigurationError, StructuralError
from explosive_mfg.kfp import (Density, bump, generator, harnack_ratio, kfp_operator,
                               linearized_hjb_operator, weak_residuals)


@pytest.fixture(scope="module")
def value_drift(value15):
    return drift_from_value(value15)


def test_zero_drift_uniform(dom512):
    m = solve_kfp_neumann(DriftField.zero(dom512), delta=0.05)
    ref = 1.0 / m.mask.sum() / dom512.h
    assert np.max(np.abs(m.values[m.mask] - ref)) < 1e-10


def test_constant_drift_exponential(dom512):
    m = solve_kfp_neumann(DriftField.constant(dom512, [2.0]), delta=0.05)
    x = dom512.nodes[m.mask, 0]
    ref = np.exp(-2.0 * x)
    ref /= ref.sum() * dom512.h
    assert np.max(np.abs(m.values[m.mask] / ref - 1.0)) < 1e-8


def test_adjoint_consistency(value_drift):
    mask = value_drift.domain.subdomain_mask(0.05)
    A = kfp_operator(value_drift, mask)
    G = generator(value_drift, mask)
    assert abs(A - G.T).max() == 0.0
    assert abs(linearized_hjb_operator(value_drift, mask) + G).max() == 0.0
    assert np.allclose(np.asarray(G.sum(axis=1)).ravel(), 0.0, atol=1e-6 * abs(G).max())


def test_whole_domain_density(value_drift):
    res = solve_kfp_whole(value_drift, return_details=True)
    m = res.density
    assert abs(m.mass - 1.0) < 1e-12
    assert np.all(m.values >= 0)
    assert np.all(np.diff(res.l1_differences) < 0)
    assert np.max(np.abs(m.values - m.values[::-1])) < 1e-8 * m.values.max()
    assert 1.0 <= harnack_ratio(m, 0.1) < np.inf


def test_schedule_independence(value_drift):
    dom = value_drift.domain
    a = solve_kfp_whole(value_drift, continuation=[0.1, 0.05, 0.025, 2 * dom.h])
    b = solve_kfp_whole(value_drift, continuation=[0.08, 0.03, 0.012, 2 * dom.h])
    assert a.l1_distance(b) < 1e-6


def test_non_confining_drift_rejected(dom128):
    with pytest.raises(ConfigurationError, match="not > 1"):
        solve_kfp_whole(DriftField.zero(dom128))


def test_disconnected_support_is_structural_error(dom128):
    mask = dom128.subdomain_mask(0.05) & (np.abs(dom128.nodes[:, 0] - 0.5) > 0.05)
    with pytest.raises(StructuralError):
        solve_kfp_neumann(DriftField.zero(dom128), mask=mask)


def test_weighted_norm_uniform():
    dom = build_domain(DomainSpec(resolution=4096))
    m = Density.uniform(dom)
    assert weighted_norm(m, 0.5) == pytest.approx(2 * np.sqrt(2), rel=2e-2)
    assert weighted_norm(m, 3.0) == np.inf


def test_certificate_and_weighted_norm(value_drift):
    m = solve_kfp_whole(value_drift)
    cert = lyapunov_certificate(value_drift, m, LyapunovSpec.for_q(1.5, 1.0))
    assert cert.exponent == pytest.approx(-1.0)
    assert cert.weight_exponent == pytest.approx(-3.0)
    assert cert.passed
    assert np.isfinite(weighted_norm(m, 3.0))


def test_weak_residuals_small(value_drift):
    m = solve_kfp_whole(value_drift)
    assert max(weak_residuals(m, value_drift)) <= 5 * value_drift.domain.h


def test_estimator(value_drift):
    est = FokkerPlanck(delta=0.05).fit(value_drift)
    assert est.predict([0.5])[0] > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(-20, 20), st.floats(0.035, 0.2))
def test_constant_drift_mass_and_positivity(c, delta):
    dom = build_domain(DomainSpec(resolution=64))
    m = solve_kfp_neumann(DriftField.constant(dom, [c]), delta=delta)
    assert abs(m.mass - 1.0) < 1e-12
    assert np.all(m.values[m.mask] > 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.05, 0.3), st.integers(3, 6))
def test_bump_derivatives(c, r, k):
    x = np.linspace(0, 1, 2001)[:, None]
    phi, grad, lap = bump(x, np.array([c]), r, power=k)
    h = x[1, 0] - x[0, 0]
    assert np.allclose(np.gradient(phi, h), grad[:, 0], atol=50 * h / r ** 2)
    assert np.allclose(np.gradient(grad[:, 0], h), lap, atol=200 * h / r ** 3)
