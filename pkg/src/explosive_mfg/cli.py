"""Command line front end.

Usage::

    explosive-mfg COMMAND [--config PATH] [--out DIR] [--seed N] [--log LEVEL]
    explosive-mfg uniqueness RUN_A RUN_B [--config PATH] [--out DIR]

Exit status: 0 when every check passes, 1 when a check fails, 2 when a
solver does not converge, 3 on configuration errors.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .artifacts import write_json, write_plot_script, write_table
from .config import RunConfig
from .domain import read_field_csv, write_field_csv
from .exceptions import (ConfigurationError, LyapunovSpecError, MFGError, SolverError,
                         StructuralError)

log = logging.getLogger("explosive_mfg")

COMMANDS = ("solve-nonlocal", "solve-local", "hjb", "kfp", "sweep", "particles", "uniqueness")
EXIT_OK, EXIT_CHECK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3


@dataclass(frozen=True)
class RunManifest:
    """What to run and where the artifacts go."""

    command: str
    config_path: str = None
    output_dir: str = "."
    seed: int = None
    log_level: str = "WARNING"
    runs: tuple = ()

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}; one of {COMMANDS}")
        if self.command == "uniqueness" and len(self.runs) != 2:
            raise ConfigurationError("uniqueness needs exactly two run directories")
        if self.command != "uniqueness" and self.runs:
            raise ConfigurationError(f"{self.command} takes no positional run directories")

    def to_dict(self):
        return {"command": self.command, "config_path": self.config_path,
                "output_dir": self.output_dir, "seed": self.seed,
                "log_level": self.log_level, "runs": list(self.runs)}


# shared pieces ---------------------------------------------------------------

def _field(out, name, domain, values, column):
    write_field_csv(os.path.join(out, name), domain, values, name=column)


def _value_artifacts(out, sol):
    _field(out, "u.csv", sol.domain, sol.u.values, "u")


def _bands_csv(out, rep):
    b = rep.bands
    keys = ["d", "u", "grad_nu", "drift_nu", "grad_seq", "drift_seq"]
    write_table(os.path.join(out, "bands.csv"), keys,
                zip(*[np.asarray(b[k], dtype=float) for k in keys]))


def _trace_csv(out, header, rows):
    write_table(os.path.join(out, "residual_trace.csv"), header, rows)


def _initial_density(cfg, domain, mask=None, delta=None):
    from .kfp import Density

    m = cfg.sections["mfg"]
    if m["initial"] == "uniform":
        return None
    x = domain.nodes[:, 0] - domain.center[0]
    return Density.from_values(domain, np.exp(float(m["tilt"]) * x), mask, delta)


def _mfg_checks(sol, cfg, verify):
    from .kfp import LyapunovSpec, lyapunov_certificate, weighted_norm

    dom = sol.domain
    cert = lyapunov_certificate(sol.drift, sol.m, LyapunovSpec.for_q(cfg.q))
    gamma = sol.config.gamma
    wn = weighted_norm(sol.m, gamma)
    checks = {"fixed_point_converged": bool(sol.converged),
              "weak_residuals_below_5h": verify["max_weak_residual"] <= 5.0 * dom.h,
              "lyapunov_certificate": bool(cert.passed),
              "weighted_norm_finite": bool(np.isfinite(wn))}
    return checks, {"certificate": cert.to_dict(), "weighted_norm": wn, "gamma": gamma}


# commands --------------------------------------------------------------------

def cmd_hjb(cfg, out):
    from .hjb import fit_boundary_asymptotics, solve_ergodic

    prob = cfg.hjb_problem()
    sol = solve_ergodic(prob)
    rep = fit_boundary_asymptotics(sol, min_band=cfg.sections["hjb"]["min_band"])
    rel = rep.relative_errors()
    _value_artifacts(out, sol)
    _bands_csv(out, rep)
    _trace_csv(out, ["stage", "lambda", "level", "residual"],
               [("discount", lam, lev, float("nan")) for lam, lev in sol.lambda_trace]
               + [("ergodic", 0.0, sol.rho, sol.residual_norm)])
    checks = {f"{k}_within_10pct": v <= 0.1 for k, v in rel.items()}
    report = {"rho": sol.rho, "rho_extrapolated": sol.rho_extrapolated,
              "residual_norm": sol.residual_norm, "iterations": sol.iterations,
              "asymptotics": rep.to_dict(), "relative_errors": rel}
    return report, checks


def cmd_kfp(cfg, out):
    from .hjb import DriftField, drift_from_value, solve_ergodic
    from .kfp import (Density, LyapunovSpec, harnack_ratio, lyapunov_certificate,
                      solve_kfp_neumann, solve_kfp_whole, weak_residuals, weighted_norm)
    from ._validation import gamma_interval

    k = cfg.sections["kfp"]
    dom = cfg.domain
    report, checks = {"drift": k["drift"]}, {}
    if k["drift"] == "value":
        sol = solve_ergodic(cfg.hjb_problem())
        _value_artifacts(out, sol)
        drift = drift_from_value(sol)
        res = solve_kfp_whole(drift, continuation=k["continuation"], return_details=True)
        m = res.density
        eps = k["lyapunov_epsilon"]
        cert = lyapunov_certificate(drift, m, LyapunovSpec.for_q(cfg.q, eps))
        lo, hi = gamma_interval(cfg.q)
        gamma = 0.5 * (lo + hi) if k["gamma"] is None else k["gamma"]
        wn = weighted_norm(m, gamma)
        weak = weak_residuals(m, drift, n_tests=k["n_weak_tests"], seed=cfg.seed)
        report.update(rho=sol.rho, continuation=res.deltas, l1_differences=res.l1_differences,
                      escaping_mass=res.escaping_mass, drift_constant=res.drift_constant,
                      certificate=cert.to_dict(), weighted_norm=wn, gamma=gamma,
                      weak_residuals=weak, harnack_ratio=harnack_ratio(m, 0.1))
        checks.update(lyapunov_certificate=bool(cert.passed),
                      weighted_norm_finite=bool(np.isfinite(wn)),
                      weak_residuals_below_5h=max(weak) <= 5.0 * dom.h)
        _trace_csv(out, ["member", "delta", "residual"],
                   [(i + 1, res.deltas[i + 1], v) for i, v in enumerate(res.l1_differences)])
    else:
        delta = 0.05 if k["delta"] is None else float(k["delta"])
        if k["drift"] == "zero":
            drift = DriftField.zero(dom)
        else:
            vec = k["drift_vector"]
            if vec is None:
                raise ConfigurationError("[kfp] drift = 'constant' needs drift_vector")
            drift = DriftField.constant(dom, vec)
        m = solve_kfp_neumann(drift, delta=delta)
        sel = m.mask
        if k["drift"] == "zero":
            ref = Density.uniform(dom, sel, delta).values
            err = float(np.max(np.abs(m.values - ref)[sel]))
            checks["uniform_within_1e-10"] = err < 1e-10
            report["max_deviation"] = err
        elif dom.dim == 1:
            c = float(np.atleast_1d(vec)[0])
            ref = Density.from_values(dom, np.exp(-c * dom.nodes[:, 0]), sel, delta).values
            err = float(np.max(np.abs(m.values[sel] / ref[sel] - 1.0)))
            checks["exponential_within_1e-8"] = err < 1e-8
            report["max_relative_error"] = err
        report["delta"] = delta
        _trace_csv(out, ["member", "delta", "residual"], [])
    checks["unit_mass"] = abs(m.mass - 1.0) < 1e-12
    checks["non_negative"] = bool(np.all(m.values >= 0))
    report["mass"] = m.mass
    _field(out, "m.csv", dom, m.values, "m")
    return report, checks


def _solve_mfg(cfg, kind):
    from .mfg import solve_local, solve_nonlocal

    mcfg = cfg.mfg_config()
    if kind == "nonlocal":
        sol = solve_nonlocal(mcfg, m0=_initial_density(cfg, cfg.domain))
    else:
        sol = solve_local(mcfg, strict=False)
    return sol


def cmd_solve(cfg, out, kind):
    from .mfg import verify_solution

    if kind == "nonlocal" and cfg.coupling.is_local:
        raise ConfigurationError("solve-nonlocal needs [coupling] kind = 'nonlocal_kernel'")
    if kind == "local" and not cfg.coupling.is_local:
        raise ConfigurationError("solve-local needs [coupling] kind = 'local_function'")
    sol = _solve_mfg(cfg, kind)
    dom = sol.domain
    verify = verify_solution(sol, n_tests=cfg.sections["kfp"]["n_weak_tests"], seed=cfg.seed)
    checks, extra = _mfg_checks(sol, cfg, verify)
    _value_artifacts(out, sol)
    _field(out, "m.csv", dom, sol.m.values, "m")
    _field(out, "F.csv", dom, sol.coupling_values.values, "F")
    if kind == "local":
        members = sol.delta_trace
        rows = [(mem.diagnostics["delta"], i + 1, r)
                for mem in members for i, r in enumerate(mem.fp_residual_trace)]
        checks.update({f"cauchy_{k}": bool(v) for k, v in sol.diagnostics["cauchy"].items()})
        checks["residual_below_tolerance"] = all(
            mem.fp_residual_trace[-1] < sol.config.fp_tolerance for mem in members)
        _trace_csv(out, ["delta", "iteration", "residual"], rows)
    else:
        _trace_csv(out, ["iteration", "residual"],
                   [(i + 1, r) for i, r in enumerate(sol.fp_residual_trace)])
    report = {"kind": kind, "rho": sol.rho, "iterations": sol.iterations,
              "fp_residual_trace": sol.fp_residual_trace, "verify": verify,
              "diagnostics": sol.diagnostics, **extra}
    return report, checks


def cmd_sweep(cfg, out):
    from .asymptotics import run_sweep

    rep = run_sweep(cfg.sweep_plan())
    rep.write_tables(out)
    checks = {f"convergence_q{c['q']:g}_{c['quantity']}": bool(c["ok"])
              for c in rep.convergence if c["checked"]}
    for u in rep.uniformity:
        checks[f"uniformity_q{u['q']:g}_{u['band'][0]:g}_{u['band'][1]:g}"] = bool(u["ok"])
    return rep.to_dict(), checks


def cmd_particles(cfg, out):
    from .hjb import DriftField, drift_from_value, solve_ergodic
    from .kfp import solve_kfp_whole
    from .particles import ParticleConfig, brownian_exit_probability, simulate

    p = cfg.sections["particles"]
    dom = cfg.domain
    density = None
    if p["drift"] == "mfg":
        sol = _solve_mfg(cfg, "local" if cfg.coupling.is_local else "nonlocal")
        drift, density = sol.drift, sol.m
    elif p["drift"] == "value":
        val = solve_ergodic(cfg.hjb_problem())
        drift = drift_from_value(val)
        density = solve_kfp_whole(drift)
    else:
        drift = DriftField.zero(dom)
    pc = ParticleConfig(drift, n_particles=p["n_particles"], T=p["T"], base_dt=p["base_dt"],
                        seed=cfg.seed, safety_band=p["safety_band"], start=p["start"])
    rep = simulate(pc, density=density)
    report = rep.to_dict()
    checks = {}
    if p["drift"] == "zero":
        checks["exits_positive"] = rep.exit_count > 0
        starts = pc.starts()
        if dom.dim == 1 and np.all(starts == starts[0]):
            oracle = brownian_exit_probability(float(starts[0, 0]), p["T"], dom.spec.extents[0])
            report["oracle_exit_fraction"] = oracle
            checks["oracle_within_2pct"] = abs(rep.exit_fraction - oracle) <= 0.02
    else:
        checks["no_exits"] = rep.exit_count == 0
        checks["tv_below_0.1"] = rep.tv_distance < 0.1
        _field(out, "m.csv", dom, density.values, "m")
    rep.histogram_csv(os.path.join(out, "histogram.csv"), dom)
    return report, checks


def _load_run(directory, domain=None):
    """Rebuild an MFGSolution from a solve-* run directory."""
    from .domain import GridField
    from .kfp import Density
    from .mfg import MFGSolution

    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
        with open(os.path.join(directory, "report.json")) as fh:
            rep = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"{directory!r} is not a run directory: {exc}") from exc
    if man.get("command") not in ("solve-nonlocal", "solve-local"):
        raise ConfigurationError(f"{directory!r} is not a solve-nonlocal/solve-local run")
    sections = copy.deepcopy(man["config"])
    sections["domain"].pop("h", None)
    cfg = RunConfig(sections, man.get("config_dir", "."))
    dom = cfg.domain if domain is None else domain
    if dom.spec != cfg.domain_spec:
        raise ConfigurationError("the two runs use different grids")
    u = read_field_csv(os.path.join(directory, "u.csv"))[1][:, -1]
    m = read_field_csv(os.path.join(directory, "m.csv"))[1][:, -1]
    mcfg = cfg.mfg_config(dom)
    dens = Density.from_values(dom, m)
    sol = MFGSolution(u=GridField(u, dom), rho=float(rep["rho"]), m=dens,
                      iterations=int(rep.get("iterations", 0)),
                      fp_residual_trace=rep.get("fp_residual_trace", []), config=mcfg)
    return sol, dom


def cmd_uniqueness(cfg, out, runs):
    from .mfg import uniqueness_diagnostic

    a, dom = _load_run(runs[0])
    b, _ = _load_run(runs[1], dom)
    m = cfg.sections["mfg"]
    delta, refine = float(m["identity_delta"]), m["identity_refinements"]
    if refine is None:
        refine = 1
        while refine < 3 and delta / 2 ** refine >= 2.0 * dom.h:
            refine += 1
    rep = uniqueness_diagnostic(a, b, delta=delta, refinements=int(refine),
                                tol=m["identity_tol"])
    l1 = a.m.l1_distance(b.m)
    drho = abs(a.rho - b.rho)
    write_json(os.path.join(out, "identity_report.json"), rep.to_dict())
    checks = {f"identity_{k}": bool(v) for k, v in rep.passed.items()}
    checks["m_l1_below_1e-6"] = l1 < 1e-6
    checks["rho_gap_below_1e-4"] = drho < 1e-4
    return {"runs": list(runs), "m_l1_distance": l1, "rho_gap": drho,
            "identity": rep.to_dict()}, checks


# driver ----------------------------------------------------------------------

def run(manifest, config=None):
    """Execute ``manifest``; returns the exit status.

    ``manifest.json`` is written first (with the resolved configuration
    and the package version) and ``report.json`` last, also on failure.
    """
    out = manifest.output_dir
    os.makedirs(out, exist_ok=True)
    man = {**manifest.to_dict(), "version": __version__}
    status, report, checks = EXIT_OK, {}, {}
    try:
        cfg = config if config is not None else RunConfig.from_file(manifest.config_path) \
            if manifest.config_path else RunConfig()
        if manifest.seed is not None:
            cfg = cfg.with_seed(manifest.seed)
        man.update(config=cfg.resolved(), config_dir=cfg.base_dir)
        write_json(os.path.join(out, "manifest.json"), man)
        cmd = manifest.command
        if cmd == "hjb":
            report, checks = cmd_hjb(cfg, out)
        elif cmd == "kfp":
            report, checks = cmd_kfp(cfg, out)
        elif cmd == "solve-nonlocal":
            report, checks = cmd_solve(cfg, out, "nonlocal")
        elif cmd == "solve-local":
            report, checks = cmd_solve(cfg, out, "local")
        elif cmd == "sweep":
            report, checks = cmd_sweep(cfg, out)
        elif cmd == "particles":
            report, checks = cmd_particles(cfg, out)
        else:
            report, checks = cmd_uniqueness(cfg, out, manifest.runs)
        status = EXIT_OK if all(checks.values()) else EXIT_CHECK
    except (ConfigurationError, LyapunovSpecError) as exc:
        status, report = EXIT_CONFIG, {"error": str(exc), "error_type": type(exc).__name__}
        if "config" not in man:
            write_json(os.path.join(out, "manifest.json"), man)
    except (SolverError, StructuralError, MFGError) as exc:
        status = EXIT_SOLVER
        report = {"error": str(exc), "error_type": type(exc).__name__,
                  "residual": getattr(exc, "residual", None),
                  "trace": getattr(exc, "trace", None)}
    if status == EXIT_SOLVER:
        log.error("solver failure: %s", report["error"])
    failed = sorted(k for k, v in checks.items() if not v)
    if failed:
        log.warning("failed checks: %s", ", ".join(failed))
    write_json(os.path.join(out, "report.json"),
               {**report, "checks": checks, "pass": status == EXIT_OK, "exit_status": status})
    write_plot_script(out)
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="explosive-mfg", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("runs", nargs="*", help="two run directories (uniqueness only)")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--out", metavar="DIR", default=".")
    p.add_argument("--seed", metavar="N", type=int)
    p.add_argument("--log", metavar="LEVEL", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = RunManifest(args.command, args.config, args.out, args.seed, args.log,
                               tuple(args.runs))
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = run(manifest)
    if status == EXIT_CONFIG:
        with open(os.path.join(args.out, "report.json")) as fh:
            print(f"error: {json.load(fh)['error']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
