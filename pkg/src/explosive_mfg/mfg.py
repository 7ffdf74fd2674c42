"""Fixed-point drivers for the coupled ergodic MFG system.

* :func:`solve_nonlocal` iterates in the weighted space W_gamma for a
  non-local coupling.
* :func:`solve_local_delta` solves the approximate system where the KFP
  equation lives on Omega_delta with no-flux conditions and the coupling
  sees the Hoelder extension of m_delta.
* :func:`solve_local` continues delta -> 0 and checks the limit.
* :func:`uniqueness_diagnostic` evaluates every term of the Lasry-Lions
  identity with a boundary cut-off.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_decreasing, check_gamma, check_int, check_q, check_scalar
from ._validation import gamma_interval
from .coupling import Coupling, evaluate
from .domain import GridField, holder_norm
from .exceptions import ConfigurationError, ContinuationError, SolverError
from .hjb import (DEFAULT_LAMBDAS, HJBProblem, drift_from_value, drift_map, node_gradient,
                  residual, solve_ergodic)
from .kfp import (Density, LyapunovSpec, harnack_ratio, lyapunov_certificate,
                  solve_kfp_neumann, solve_kfp_whole, weak_residuals, weighted_difference,
                  weighted_norm)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MFGConfig:
    """Parameters of a fixed-point run.

    Parameters
    ----------
    domain : Domain
    q : float in (1, 2]
    coupling : Coupling
    gamma : float, optional
        Weight exponent of W_gamma, inside (2, (2q-1)/(q-1)); defaults to
        the midpoint.
    delta_schedule : tuple of float
        Strictly decreasing, last entry >= 2h.
    theta : float in (0, 1]
        Picard damping.
    fp_tolerance : float
    max_iterations : int
    x0 : int, optional
    alpha : float
        Hoelder exponent for the local path.
    holder_radius : float
        Pair radius of the localized Hoelder seminorm.
    """

    domain: object
    q: float = 1.5
    coupling: Coupling = field(default_factory=Coupling)
    gamma: float = None
    delta_schedule: tuple = (0.1, 0.05, 0.025)
    theta: float = 0.5
    fp_tolerance: float = 1e-8
    max_iterations: int = 200
    x0: int = None
    alpha: float = 0.5
    holder_radius: float = 0.25
    boundary_layer: str = "profile"
    lambda_schedule: tuple = DEFAULT_LAMBDAS
    hjb_tol: float = 1e-10

    def __post_init__(self):
        q = check_q(self.q)
        object.__setattr__(self, "q", q)
        if self.gamma is None:
            lo, hi = gamma_interval(q)
            object.__setattr__(self, "gamma", 0.5 * (lo + hi))
        else:
            object.__setattr__(self, "gamma", check_gamma(self.gamma, q))
        sched = check_decreasing(self.delta_schedule, "delta_schedule")
        if sched[-1] < 2.0 * self.domain.h - 1e-12:
            raise ConfigurationError(
                f"final delta {sched[-1]:g} must be >= 2h = {2 * self.domain.h:g}")
        object.__setattr__(self, "delta_schedule", tuple(sched))
        check_scalar(self.theta, "theta", 0.0, 1.0, closed_low=False)
        check_scalar(self.fp_tolerance, "fp_tolerance", low=0.0, closed_low=False)
        check_int(self.max_iterations, "max_iterations", low=1)
        check_scalar(self.alpha, "alpha", 0.0, 1.0, closed_low=False)
        if not isinstance(self.coupling, Coupling):
            raise ConfigurationError("coupling must be a Coupling instance")

    def problem(self, g=None):
        return HJBProblem(self.domain, self.q, g, self.x0, self.boundary_layer,
                          self.lambda_schedule, self.hjb_tol)


@dataclass(eq=False)
class MFGSolution:
    """Solution triplet (u, rho, m) with iteration diagnostics."""

    u: GridField
    rho: float
    m: Density
    iterations: int
    fp_residual_trace: list
    delta_trace: list = field(default_factory=list)
    value: object = None
    drift: object = None
    config: MFGConfig = None
    norm_trace: list = field(default_factory=list)
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def domain(self):
        return self.u.domain

    @property
    def coupling_values(self):
        return evaluate(self.config.coupling, self.m, self.config.alpha)


def _picard(config, m0, step, norm, label):
    """Damped Picard iteration; ``step(m) -> (T(m), value_solution, drift)``."""
    theta = config.theta
    m = m0
    trace, norms = [], []
    state = None
    for k in range(1, config.max_iterations + 1):
        Tm, state = step(m, state)
        new_vals = (1.0 - theta) * m.values + theta * Tm.values
        m_new = Density.from_values(m.domain, new_vals, Tm.mask, Tm.delta)
        res = norm(m_new, m)
        trace.append(res)
        norms.append(state.get("ceiling", np.nan))
        m = m_new
        log.debug("%s iteration %d residual %.3e", label, k, res)
        if res < config.fp_tolerance:
            return m, state, k, trace, norms, True
    raise SolverError(f"{label}: no convergence in {config.max_iterations} iterations "
                      f"(last residual {trace[-1]:.3e})", residual=trace[-1], trace=trace)


def _raw_weighted(m, gamma):
    dom = m.domain
    sel = m.mask & (dom.d_exact > 0)
    return float(np.sum(dom.d_exact[sel] ** -gamma * m.values[sel]) * dom.cell_volume)


def solve_nonlocal(config, m0=None, final_continuation=None):
    """Damped Picard iteration for a non-local coupling in W_gamma.

    ``T(m)`` solves the HJB equation with right-hand side ``F(x; m)``,
    builds the drift and returns the whole-domain KFP density.  The
    iteration stops when the W_gamma norm of successive differences falls
    below ``config.fp_tolerance``.

    Parameters
    ----------
    config : MFGConfig
    m0 : Density, optional
        Initial density (uniform by default).
    final_continuation : list of float, optional
        Continuation schedule for the final, fully checked KFP solve.
    """
    if config.coupling.is_local:
        raise ConfigurationError("solve_nonlocal needs a non-local coupling")
    dom = config.domain
    m0 = Density.uniform(dom) if m0 is None else m0
    gamma = config.gamma
    finest = [2.0 * dom.h]

    def step(m, state):
        warm = None if state is None else state["value"]
        F = evaluate(config.coupling, m).values
        val = solve_ergodic(config.problem(F), warm_start=warm,
                            path="full" if warm is None else "newton")
        b = drift_from_value(val)
        Tm = solve_kfp_whole(b, continuation=finest, check=False)
        return Tm, {"value": val, "drift": b, "ceiling": _raw_weighted(m, gamma)}

    m, state, its, trace, norms, ok = _picard(
        config, m0, step, lambda a, b: weighted_difference(a, b, gamma), "nonlocal")
    F = evaluate(config.coupling, m).values
    val = solve_ergodic(config.problem(F), warm_start=state["value"], path="full")
    b = drift_from_value(val)
    details = solve_kfp_whole(b, continuation=final_continuation, return_details=True)
    fixed_gap = weighted_difference(details.density, m, gamma)
    diag = {"continuation_l1": details.l1_differences, "fixed_point_gap": fixed_gap,
            "w_gamma_ceiling": float(np.nanmax(norms)),
            "w_gamma_norm": weighted_norm(m, gamma),
            "drift_constant": details.drift_constant}
    return MFGSolution(u=val.u, rho=val.rho, m=m, iterations=its, fp_residual_trace=trace,
                       value=val, drift=b, config=config, norm_trace=norms,
                       diagnostics=diag)


def _holder_diff(config, mask):
    pts = config.domain.nodes[mask]

    def norm(a, b):
        return holder_norm((a.values - b.values)[mask], pts, config.alpha,
                           radius=config.holder_radius)
    return norm


def solve_local_delta(config, delta, m0=None, warm=None):
    """Fixed point of the delta-approximate system for a local coupling.

    The HJB equation is solved on the whole domain with right-hand side
    ``f(m~)`` where ``m~`` is the Hoelder extension of the current density;
    the KFP equation is solved on Omega_delta with no-flux closure.
    Convergence is measured in the localized Hoelder-alpha norm on
    Omega_delta.
    """
    if not config.coupling.is_local:
        raise ConfigurationError("solve_local_delta needs a local coupling")
    dom = config.domain
    delta = check_scalar(delta, "delta", low=2.0 * dom.h - 1e-12)
    mask = dom.subdomain_mask(delta)
    if m0 is None:
        m0 = Density.uniform(dom, mask, delta)
    else:
        m0 = Density.from_values(dom, np.where(mask, m0.values, 0.0), mask, delta)

    def step(m, state):
        prev = warm if state is None else state["value"]
        F = evaluate(config.coupling, m, config.alpha).values
        val = solve_ergodic(config.problem(F), warm_start=prev,
                            path="full" if prev is None else "newton")
        b = drift_from_value(val)
        Tm = solve_kfp_neumann(b, mask=mask)
        Tm = Density(Tm.values, mask, dom, delta)
        pts = dom.nodes[mask]
        ceiling = holder_norm(m.values[mask], pts, config.alpha, radius=config.holder_radius)
        return Tm, {"value": val, "drift": b, "ceiling": ceiling}

    m, state, its, trace, norms, ok = _picard(config, m0, step, _holder_diff(config, mask),
                                              f"local(delta={delta:g})")
    F = evaluate(config.coupling, m, config.alpha).values
    val = solve_ergodic(config.problem(F), warm_start=state["value"], path="newton")
    b = drift_from_value(val)
    diag = {"delta": delta, "harnack_ratio": harnack_ratio(m, delta),
            "holder_ceiling": float(np.nanmax(norms)), "min_m": float(m.values[mask].min())}
    return MFGSolution(u=val.u, rho=val.rho, m=m, iterations=its, fp_residual_trace=trace,
                       value=val, drift=b, config=config, norm_trace=norms, diagnostics=diag)


def solve_local(config, strict=True):
    """Continue the delta-approximate solutions along ``config.delta_schedule``.

    Checks that rho_delta, u_delta (max-norm on Omega_0.1) and m_delta (L1)
    form Cauchy sequences with decreasing increments, and certifies
    tightness of each m_delta with the Lyapunov function for C = q/(q-1).
    Returns the finest member with the traces in ``delta_trace``.

    Raises
    ------
    ContinuationError
        If ``strict`` and an increment fails to decrease.
    """
    dom = config.domain
    members = []
    m_prev, warm = None, None
    for delta in config.delta_schedule:
        sol = solve_local_delta(config, delta, m0=m_prev, warm=warm)
        try:
            cert = lyapunov_certificate(sol.drift, sol.m, LyapunovSpec.for_q(config.q))
            sol.diagnostics["certificate_pass"] = cert.passed
            sol.diagnostics["certificate_max_ratio"] = cert.max_ratio
        except Exception as exc:  # reported, judged below
            sol.diagnostics["certificate_pass"] = False
            sol.diagnostics["certificate_error"] = str(exc)
        members.append(sol)
        m_prev, warm = sol.m, sol.value
    inner = dom.subdomain_mask(0.1)
    rho_inc = [abs(a.rho - b.rho) for a, b in zip(members, members[1:])]
    u_inc = [float(np.max(np.abs(a.u.values - b.u.values)[inner]))
             for a, b in zip(members, members[1:])]
    m_inc = [a.m.l1_distance(b.m) for a, b in zip(members, members[1:])]
    traces = {"delta": list(config.delta_schedule), "rho": [s.rho for s in members],
              "rho_increments": rho_inc, "u_increments": u_inc, "m_increments": m_inc,
              "iterations": [s.iterations for s in members],
              "certificates": [s.diagnostics.get("certificate_pass") for s in members]}
    checks = {name: all(b < a for a, b in zip(inc, inc[1:]))
              for name, inc in (("rho", rho_inc), ("u", u_inc), ("m", m_inc))}
    checks["tightness"] = all(traces["certificates"])
    final = members[-1]
    final.delta_trace = members
    final.diagnostics.update({"continuation": traces, "cauchy": checks})
    if strict and not all(checks.values()):
        err = ContinuationError(f"continuation checks failed: {checks}", trace=rho_inc)
        err.traces = traces
        raise err
    return final


# Lasry-Lions identity -------------------------------------------------------

def smoothstep_cutoff(s):
    """psi(s): 0 on [0, 1], quintic smoothstep on [1, 2], 1 beyond.

    Returns psi, psi', psi''.
    """
    t = np.clip(np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)
    psi = t ** 3 * (t * (6.0 * t - 15.0) + 10.0)
    d1 = 30.0 * t ** 2 * (1.0 - t) ** 2
    d2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return psi, d1, d2


PSI_SUP = {"d1": 15.0 / 8.0, "d2": 10.0 / np.sqrt(3.0)}


@dataclass
class IdentityReport:
    rows: list
    passed: dict
    psi_constants: dict
    tol: float

    def to_dict(self):
        return {"rows": self.rows, "pass": self.passed, "psi_constants": self.psi_constants,
                "tol": self.tol}


def identity_terms(domain, q, first, second, delta, psi=None):
    """Terms of the Lasry-Lions identity for two triples at one cut-off scale.

    ``first`` and ``second`` are ``(u, rho, m, F)`` with node arrays ``u``,
    ``m`` and ``F`` (the right-hand side the value function was solved
    with).  The identity closes (``identity_residual`` ~ 0 up to
    discretization error) whenever each ``u`` solves the ergodic HJB
    equation with its ``F`` and each ``m`` is the stationary density of the
    drift of its ``u``; the pair need not be an MFG equilibrium.
    """
    dom = domain
    psi = smoothstep_cutoff if psi is None else psi
    vol = dom.cell_volume
    (u1, rho1, m1, F1), (u2, rho2, m2, F2) = first, second
    u1, u2, m1, m2, F1, F2 = (np.asarray(v, dtype=float) for v in (u1, u2, m1, m2, F1, F2))
    p1, p2 = node_gradient(dom, u1), node_gradient(dom, u2)
    b1, b2 = drift_map(p1, q), drift_map(p2, q)
    H1 = np.linalg.norm(p1, axis=1) ** q
    H2 = np.linalg.norm(p2, axis=1) ** q
    ubar, mbar, rbar = u1 - u2, m1 - m2, rho1 - rho2
    pbar = p1 - p2

    s = dom.d / delta
    ps, dps, d2ps = psi(s)
    phi = ps
    gphi = (dps / delta)[:, None] * dom.grad_d
    lphi = d2ps / delta ** 2 * np.sum(dom.grad_d ** 2, axis=1) + dps / delta * dom.laplacian_d

    flux = m1[:, None] * b1 - m2[:, None] * b2
    mono = np.sum((F1 - F2) * mbar * phi) * vol
    con1 = np.sum(phi * m1 * (H1 - H2 - np.sum(b1 * (p1 - p2), axis=1))) * vol
    con2 = np.sum(phi * m2 * (H2 - H1 - np.sum(b2 * (p2 - p1), axis=1))) * vol
    rho_term = rbar * np.sum(mbar * phi) * vol
    r_dphi = (-np.sum(ubar * np.sum(gphi * flux, axis=1))
              + 2.0 * np.sum(mbar * np.sum(gphi * pbar, axis=1))) * vol
    r_lphi = np.sum(mbar * ubar * lphi) * vol
    ident = mono - (con1 + con2 + rho_term + r_dphi + r_lphi)

    band = (dom.d_exact > delta) & (dom.d_exact <= 2.0 * delta)
    outer = dom.d_exact <= 2.0 * delta
    dd = dom.d_exact
    if q < 2.0:
        w = dd[band] ** (-q / (q - 1.0))
        w2 = w
    else:
        w = dd[band] ** -1.0 * (-np.log(dd[band]))
        w2 = dd[band] ** -2.0
    b2_bound = float(np.sum(w * (m1 + m2 + np.abs(mbar))[band]) * vol)
    b3_bound = float(np.sum(w2 * (m1 + m2)[band]) * vol)
    rho_bound = float(2.0 * abs(rbar) * np.sum((m1 + m2)[outer]) * vol)
    C1 = PSI_SUP["d1"] * float(np.max(np.linalg.norm(dom.grad_d[band], axis=1))) \
        if band.any() else 0.0
    gnorm = np.linalg.norm(gphi, axis=1)
    return {"delta": float(delta), "monotonicity": float(mono), "con1": float(con1),
            "con2": float(con2), "rho_term": float(rho_term), "dphi_remainder": float(r_dphi),
            "laplace_phi_remainder": float(r_lphi), "identity_residual": float(ident),
            "b2_weight": b2_bound, "b3_weight": b3_bound, "rho_bound": rho_bound,
            "C1": C1, "max_dphi_times_delta": float(np.max(gnorm) * delta),
            "dphi_bound_ok": bool(np.all(gnorm <= C1 / delta * (1 + 1e-12)))}


def uniqueness_diagnostic(sol1, sol2, delta=0.05, psi=None, refinements=3, tol=1e-8):
    """Evaluate the Lasry-Lions identity with cut-off phi = psi(d / delta).

    Terms are computed for ``delta, delta/2, ...`` (``refinements``
    values).  Pass criteria: monotonicity term >= -tol, convexity brackets
    <= tol, and both remainders shrinking by at least a factor 2 per
    halving of delta.  Remainders of magnitude <= tol are treated as
    resolved zeros: two converged runs of a problem with a unique
    solution coincide to solver precision, and their remainders (quadratic
    in the differences) are then rounding noise with no trend in delta.

    Raises
    ------
    ConfigurationError
        If the two solutions do not share grid, exponent and coupling.
    """
    d1, d2 = sol1.domain, sol2.domain
    if d1 is not d2 and (d1.spec != d2.spec):
        raise ConfigurationError("solutions live on different grids")
    if sol1.config.q != sol2.config.q:
        raise ConfigurationError("solutions use different q")
    if sol1.config.coupling != sol2.config.coupling and \
            sol1.config.coupling.__dict__ != sol2.config.coupling.__dict__:
        raise ConfigurationError("solutions use different couplings")
    psi = smoothstep_cutoff if psi is None else psi
    deltas = [delta / 2 ** k for k in range(refinements)]
    if deltas[-1] < 2.0 * d1.h:
        raise ConfigurationError("finest delta must be at least 2h")
    triples = [(sol.u.values, sol.rho, sol.m.values,
                evaluate(sol.config.coupling, sol.m, sol.config.alpha).values)
               for sol in (sol1, sol2)]
    rows = [identity_terms(d1, sol1.config.q, triples[0], triples[1], dl, psi)
            for dl in deltas]
    mono_ok = all(r["monotonicity"] >= -tol for r in rows)
    con_ok = all(r["con1"] <= tol and r["con2"] <= tol for r in rows)

    def shrinks(key):
        vals = [abs(r[key]) if abs(r[key]) > tol else 0.0 for r in rows]
        return all(b <= a / 2.0 for a, b in zip(vals, vals[1:]))

    passed = {"monotonicity": mono_ok, "convexity": con_ok,
              "dphi_remainder": shrinks("dphi_remainder"),
              "laplace_phi_remainder": shrinks("laplace_phi_remainder"),
              "dphi_bound": all(r["dphi_bound_ok"] for r in rows)}
    return IdentityReport(rows=rows, passed=passed, psi_constants=dict(PSI_SUP), tol=tol)


def verify_solution(sol, n_tests=10, seed=0):
    """A-posteriori checks: HJB residual with rhs F(m) and KFP weak residuals."""
    F = sol.coupling_values.values
    r = residual(sol.value, g=F)
    dom = sol.domain
    inner = dom.subdomain_mask(2.0 * dom.h) & ~dom.boundary
    weak = weak_residuals(sol.m, sol.drift, n_tests=n_tests, seed=seed)
    return {"hjb_residual": float(np.max(np.abs(r[inner]))), "weak_residuals": weak,
            "max_weak_residual": max(weak)}


class MeanFieldGame(BaseEstimator):
    """Estimator front end for the MFG fixed-point solvers.

    Parameters
    ----------
    q : float
    coupling : Coupling
    gamma : float or None
    delta_schedule : tuple of float
    theta : float
    fp_tolerance : float
    max_iterations : int

    Attributes
    ----------
    solution_ : MFGSolution
    u_, m_ : ndarray
    rho_ : float
    """

    def __init__(self, q=1.5, coupling=None, gamma=None, delta_schedule=(0.1, 0.05, 0.025),
                 theta=0.5, fp_tolerance=1e-8, max_iterations=200):
        self.q = q
        self.coupling = coupling
        self.gamma = gamma
        self.delta_schedule = delta_schedule
        self.theta = theta
        self.fp_tolerance = fp_tolerance
        self.max_iterations = max_iterations

    def fit(self, domain, m0=None):
        coupling = Coupling() if self.coupling is None else self.coupling
        cfg = MFGConfig(domain, self.q, coupling, self.gamma, tuple(self.delta_schedule),
                        self.theta, self.fp_tolerance, self.max_iterations)
        if coupling.is_local:
            self.solution_ = solve_local(cfg)
        else:
            self.solution_ = solve_nonlocal(cfg, m0=m0)
        self.u_ = np.asarray(self.solution_.u.values)
        self.m_ = np.asarray(self.solution_.m.values)
        self.rho_ = self.solution_.rho
        return self
