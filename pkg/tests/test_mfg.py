import numpy as np
import pytest

from explosive_mfg import (Coupling, HJBProblem, MFGConfig, MeanFieldGame, drift_from_value,
                           solve_ergodic, solve_kfp_whole, solve_local, solve_nonlocal,
                           uniqueness_diagnostic, verify_solution)
from explosive_mfg.exceptions import ConfigurationError, SolverError
from explosive_mfg.hjb import sin_profile
from explosive_mfg.kfp import Density
from explosive_mfg.mfg import identity_terms, smoothstep_cutoff


def test_gamma_interval(dom128):
    with pytest.raises(ConfigurationError, match=r"\(2, 4\)"):
        MFGConfig(dom128, 1.5, gamma=5.0)
    assert MFGConfig(dom128, 1.5).gamma == pytest.approx(3.0)


def test_delta_schedule_validation(dom128):
    with pytest.raises(ConfigurationError):
        MFGConfig(dom128, 1.5, delta_schedule=(0.05, 0.1))
    with pytest.raises(ConfigurationError):
        MFGConfig(dom128, 1.5, delta_schedule=(0.1, 0.01))


def test_nonlocal_fixed_point(nonlocal128):
    sol = nonlocal128
    assert sol.fp_residual_trace[-1] < 1e-10
    assert abs(sol.m.mass - 1) < 1e-12
    assert np.max(np.abs(sol.m.values - sol.m.values[::-1])) < 1e-8 * sol.m.values.max()
    check = verify_solution(sol)
    assert check["max_weak_residual"] <= 5 * sol.domain.h


def test_two_initializations_agree(nonlocal128):
    dom = nonlocal128.domain
    cfg = MFGConfig(dom, 1.5, Coupling(), fp_tolerance=1e-10)
    x = dom.nodes[:, 0]
    other = solve_nonlocal(cfg, m0=Density.from_values(dom, np.exp(2 * (x - 0.5))))
    assert other.m.l1_distance(nonlocal128.m) < 1e-6
    assert abs(other.rho - nonlocal128.rho) < 1e-4
    rep = uniqueness_diagnostic(nonlocal128, other, delta=0.05, refinements=2)
    assert all(rep.passed.values())


def test_max_iterations_raises(dom128):
    cfg = MFGConfig(dom128, 1.5, Coupling(), fp_tolerance=1e-14, max_iterations=2)
    with pytest.raises(SolverError, match="no convergence"):
        solve_nonlocal(cfg)


def test_local_continuation(dom256):
    cfg = MFGConfig(dom256, 1.5, Coupling("local_function", local_f="tanh"))
    sol = solve_local(cfg)
    assert all(sol.diagnostics["cauchy"].values())
    for mem in sol.delta_trace:
        assert mem.fp_residual_trace[-1] < 1e-8


def test_coupling_kind_mismatch(dom128):
    with pytest.raises(ConfigurationError):
        solve_nonlocal(MFGConfig(dom128, 1.5, Coupling("local_function")))
    with pytest.raises(ConfigurationError):
        solve_local(MFGConfig(dom128, 1.5, Coupling()))


def test_identity_on_exact_triples(dom512):
    """Remainders of two unrelated exact (u, m) pairs shrink with delta."""
    triples = []
    for a in (0.0, 1.0):
        g = sin_profile(dom512, a)
        s = solve_ergodic(HJBProblem(dom512, 1.5, g))
        triples.append((s.u.values, s.rho, solve_kfp_whole(drift_from_value(s)).values, g))
    rows = [identity_terms(dom512, 1.5, *triples, dl) for dl in (0.05, 0.025, 0.0125)]
    for key in ("dphi_remainder", "laplace_phi_remainder"):
        v = [abs(r[key]) for r in rows]
        assert v[1] <= v[0] / 2 and v[2] <= v[1] / 2
    assert max(abs(r["identity_residual"]) for r in rows) < 1e-2 * abs(rows[0]["monotonicity"])


def test_cutoff_profile():
    s = np.linspace(0, 3, 3001)
    psi, d1, d2 = smoothstep_cutoff(s)
    assert psi[s <= 1].max() == 0 and psi[s >= 2].min() == 1
    assert d1.max() == pytest.approx(15 / 8, rel=1e-4)
    assert np.abs(d2).max() == pytest.approx(10 / np.sqrt(3), rel=1e-3)


def test_estimator(dom128):
    est = MeanFieldGame(fp_tolerance=1e-8).fit(dom128)
    assert est.m_.shape == (dom128.n_nodes,)
    assert est.get_params()["q"] == 1.5
