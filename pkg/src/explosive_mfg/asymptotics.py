"""Resolution and right-hand-side sweeps of the boundary-layer fits.

A sweep solves the explosive HJB problem for every (q, resolution, g)
member, fits the boundary asymptotics and collects

* per-member fit values and their errors against the closed-form targets,
* a convergence check (finest-resolution error at most half the coarsest),
* a uniformity table: per distance band, the drift deviation
  ``|(b . nu) d - q/(q-1)|`` across the g family at the finest resolution,
  compared with the change of the deviation from band to band.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_int, check_q, check_scalar
from .domain import DomainSpec, build_domain
from .exceptions import BandSelectionError, ConfigurationError
from .hjb import (HJBProblem, drift_from_value, drift_limit, fit_boundary_asymptotics,
                  gradient_limit, profile_exponent, profile_prefactor, sin_profile,
                  solve_ergodic)

log = logging.getLogger(__name__)


def targets_for(q):
    """Closed-form limits the fits are compared with."""
    out = {"gradient_limit": gradient_limit(q), "drift_limit": drift_limit(q)}
    if q < 2.0:
        out.update(exponent=profile_exponent(q), prefactor=profile_prefactor(q))
    else:
        out.update(log_coefficient=1.0)
    return out


def _primary(q):
    return "exponent" if q < 2.0 else "log_coefficient"


@dataclass(frozen=True)
class SweepPlan:
    """What to sweep.

    Parameters
    ----------
    q_values : tuple of float
    resolutions : tuple of int
        At least three, in geometric progression.
    g_family : tuple
        Right-hand sides.  A number ``a`` stands for the smooth bump
        ``a sin(pi d / (2 r_in))``; a callable maps a Domain to node values.
    bands : tuple of (float, float), optional
        Distance ranges of the uniformity table.  Must lie inside
        [2 h_coarsest, epsilon0 / 2]; dyadic bands ending at epsilon0 / 2
        by default.
    domain : DomainSpec
        Geometry; its resolution is replaced by each sweep resolution.
    min_band : int
        Node bands excluded from the fits, counted from the boundary.
    max_condition : float
        Largest admissible condition number of the fit design matrices.
    n_jobs : int
        Members solved concurrently.
    """

    q_values: tuple = (1.5, 2.0)
    resolutions: tuple = (256, 512, 1024)
    g_family: tuple = (0.0, 1.0, 5.0)
    bands: tuple = None
    domain: DomainSpec = DomainSpec()
    min_band: int = 3
    max_condition: float = 1e4
    n_jobs: int = 1

    def __post_init__(self):
        qs = tuple(check_q(q) for q in self.q_values)
        if not qs:
            raise ConfigurationError("q_values must not be empty")
        object.__setattr__(self, "q_values", qs)
        res = tuple(check_int(n, "resolution", low=8) for n in self.resolutions)
        if len(res) < 3:
            raise ConfigurationError("a sweep needs at least 3 resolutions")
        ratios = np.array(res[1:], dtype=float) / np.array(res[:-1], dtype=float)
        if np.any(ratios <= 1.0) or np.ptp(ratios) > 1e-9 * ratios[0]:
            raise ConfigurationError(f"resolutions must form an increasing geometric progression, got {res}")
        object.__setattr__(self, "resolutions", res)
        if not self.g_family:
            raise ConfigurationError("g_family must not be empty")
        check_int(self.min_band, "min_band", low=0)
        check_scalar(self.max_condition, "max_condition", low=1.0)
        check_int(self.n_jobs, "n_jobs", low=1)
        for n in res:
            self.domain.with_resolution(n)  # validates the grid
        eps = self.domain.epsilon0
        h_max = self.domain.with_resolution(res[0]).h
        bands = self.bands
        if bands is None:
            hi, bands = eps / 2.0, []
            while hi / 2.0 >= 2.0 * h_max and len(bands) < 3:
                bands.append((hi / 2.0, hi))
                hi /= 2.0
            bands = bands[::-1]
        bands = tuple((float(lo), float(hi)) for lo, hi in bands)
        if not bands:
            raise ConfigurationError("no distance band fits in [2h, epsilon0/2]; refine the grids")
        for lo, hi in bands:
            if not (2.0 * h_max - 1e-12 <= lo < hi <= eps / 2.0 + 1e-12):
                raise ConfigurationError(
                    f"band ({lo:g}, {hi:g}) must lie inside [2h = {2 * h_max:g}, "
                    f"epsilon0/2 = {eps / 2:g}]")
        object.__setattr__(self, "bands", bands)

    def g_fields(self, domain):
        """Node values of the g family on ``domain``."""
        out = []
        for g in self.g_family:
            vals = g(domain) if callable(g) else sin_profile(domain, float(g))
            out.append(np.asarray(vals, dtype=float))
        return out


@dataclass
class SweepReport:
    """Outcome of :func:`run_sweep`."""

    plan: SweepPlan
    records: list = field(default_factory=list)
    convergence: list = field(default_factory=list)
    uniformity: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c["ok"] for c in self.convergence) and all(u["ok"] for u in self.uniformity)

    def to_dict(self):
        plan = {"q_values": list(self.plan.q_values), "resolutions": list(self.plan.resolutions),
                "bands": [list(b) for b in self.plan.bands], "min_band": self.plan.min_band,
                "domain": {"kind": self.plan.domain.kind,
                           "extents": list(self.plan.domain.extents)}}
        return {"plan": plan, "records": self.records, "convergence": self.convergence,
                "uniformity": self.uniformity, "passed": self.passed}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=float)

    def write_tables(self, directory):
        """``fits.csv`` (one row per member) and ``uniformity.csv``."""
        import os

        keys = ["q", "resolution", "h", "g_norm", "rho", "exponent", "prefactor",
                "log_coefficient", "gradient_limit", "drift_limit", "condition_number"]
        with open(os.path.join(directory, "fits.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in self.records:
                w.writerow(["" if r.get(k) is None else r[k] for k in keys])
        with open(os.path.join(directory, "uniformity.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "band_lo", "band_hi", "g_norm", "deviation"])
            for u in self.uniformity:
                for gn, dev in zip(u["g_norms"], u["deviations"]):
                    w.writerow([u["q"], u["band"][0], u["band"][1], gn, dev])


def _band_deviation(sol, q, bands):
    dom = sol.domain
    v = drift_from_value(sol).normal_component() * dom.d_exact
    out = []
    for lo, hi in bands:
        sel = (dom.d_exact > lo) & (dom.d_exact <= hi)
        out.append(float(np.mean(np.abs(v[sel] - drift_limit(q)))))
    return out


def _member(plan, q, n):
    dom = build_domain(plan.domain.with_resolution(n))
    rows = []
    warm = None
    for g in plan.g_fields(dom):
        sol = solve_ergodic(HJBProblem(dom, q, g), warm_start=warm,
                            path="full" if warm is None else "newton")
        warm = sol
        rep = fit_boundary_asymptotics(sol, min_band=plan.min_band)
        if rep.condition_number > plan.max_condition:
            raise BandSelectionError(
                f"fit condition number {rep.condition_number:.3g} exceeds {plan.max_condition:g} "
                f"(q={q:g}, N={n}); widen the window or refine the grid")
        row = {"q": q, "resolution": n, "h": dom.h, "g_norm": float(np.max(np.abs(g))),
               "rho": sol.rho, "exponent": rep.exponent_fit, "prefactor": rep.prefactor_fit,
               "log_coefficient": rep.log_coefficient, "gradient_limit": rep.gradient_limit,
               "drift_limit": rep.drift_limit, "condition_number": rep.condition_number,
               "window_sensitivity": rep.window_sensitivity,
               "band_deviation": _band_deviation(sol, q, plan.bands)}
        t = targets_for(q)
        row["errors"] = {k: abs(row[k] - v) for k, v in t.items()}
        rows.append(row)
    return rows


def run_sweep(plan):
    """Run every member of ``plan`` and assemble a :class:`SweepReport`.

    Raises
    ------
    BandSelectionError
        If a fit design matrix is too ill-conditioned.
    """
    jobs = [(q, n) for q in plan.q_values for n in plan.resolutions]
    if plan.n_jobs > 1:
        with ThreadPoolExecutor(plan.n_jobs) as pool:
            chunks = list(pool.map(lambda a: _member(plan, *a), jobs))
    else:
        chunks = [_member(plan, *a) for a in jobs]
    records = [r for c in chunks for r in c]
    report = SweepReport(plan=plan, records=records)

    for q in plan.q_values:
        base = [r for r in records if r["q"] == q and r["g_norm"] == min(
            rr["g_norm"] for rr in records if rr["q"] == q)]
        coarse = min(base, key=lambda r: r["resolution"])
        fine = max(base, key=lambda r: r["resolution"])
        for key in targets_for(q):
            e0, e1 = coarse["errors"][key], fine["errors"][key]
            report.convergence.append({
                "q": q, "quantity": key, "coarse_error": e0, "fine_error": e1,
                "checked": key == _primary(q),
                "ok": (e1 <= 0.5 * e0) if key == _primary(q) else True})

        finest = [r for r in records if r["q"] == q and r["resolution"] == plan.resolutions[-1]]
        dev = np.array([r["band_deviation"] for r in finest])  # (g, band)
        mean = dev.mean(axis=0)
        for j, band in enumerate(plan.bands):
            spread = float(np.ptp(dev[:, j]))
            steps = [abs(mean[j] - mean[k]) for k in (j - 1, j + 1) if 0 <= k < len(mean)]
            decay = float(min(steps)) if steps else float("inf")
            report.uniformity.append({
                "q": q, "band": band, "g_norms": [r["g_norm"] for r in finest],
                "deviations": dev[:, j].tolist(), "spread": spread, "band_decay": decay,
                "ok": spread < decay})
    return report


def plan_from_config(section, domain_spec):
    """Build a :class:`SweepPlan` from a config mapping."""
    keys = {"q_values", "resolutions", "g_family", "bands", "min_band", "max_condition", "n_jobs"}
    extra = set(section) - keys
    if extra:
        raise ConfigurationError(f"unknown sweep keys: {sorted(extra)}")
    kw = {k: (tuple(tuple(b) for b in v) if k == "bands" else
              tuple(v) if isinstance(v, list) else v) for k, v in section.items()}
    return SweepPlan(domain=replace(domain_spec), **kw)
