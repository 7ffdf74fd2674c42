"""Run configuration: strict TOML sections with resolved defaults.

A config file has up to seven sections, ``[domain] [hjb] [kfp] [coupling]
[mfg] [particles] [sweep]``.  Every key is optional; unknown sections or
keys are rejected.  :meth:`RunConfig.resolved` returns the full set of
values actually used, which the CLI echoes into ``manifest.json``.
"""
from __future__ import annotations

import copy
import os
import sys
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ._validation import check_gamma, check_int, check_q
from .domain import DomainSpec, build_domain, read_field_csv
from .exceptions import ConfigurationError
from .hjb import DEFAULT_LAMBDAS, HJBProblem, sin_profile

DEFAULTS = {
    "domain": {"kind": "interval", "extents": [1.0], "resolution": 128, "epsilon0": 0.2,
               "smoothing_width": 0.2},
    "hjb": {"q": 1.5, "rhs_amplitude": 0.0, "rhs_shift": 0.0, "rhs_table": None, "x0": None,
            "boundary_layer": "profile", "lambda_schedule": list(DEFAULT_LAMBDAS),
            "tol": 1e-10, "max_iter": 100, "cross_check_tol": 1e-4, "min_band": 3},
    "kfp": {"drift": "value", "drift_vector": None, "delta": None, "continuation": None,
            "gamma": None, "lyapunov_epsilon": None, "n_weak_tests": 10},
    "coupling": {"kind": "nonlocal_kernel", "kernel_bandwidth": 0.1, "local_f": "tanh",
                 "strength": 1.0, "monotone": None},
    "mfg": {"gamma": None, "delta_schedule": [0.1, 0.05, 0.025], "theta": 0.5,
            "fp_tolerance": 1e-8, "max_iterations": 200, "alpha": 0.5, "holder_radius": 0.25,
            "initial": "uniform", "tilt": 2.0, "identity_delta": 0.05,
            "identity_refinements": None, "identity_tol": 1e-8},
    "particles": {"drift": "mfg", "n_particles": 10_000, "T": 10.0, "base_dt": 2.5e-4,
                  "safety_band": 0.2, "start": None, "seed": 0},
    "sweep": {"q_values": [1.5, 2.0], "resolutions": [256, 512, 1024],
              "g_family": [0.0, 1.0, 5.0], "bands": None, "min_band": 3,
              "max_condition": 1e4, "n_jobs": 1},
}

KFP_DRIFTS = ("value", "zero", "constant")
PARTICLE_DRIFTS = ("mfg", "value", "zero")
INITIAL = ("uniform", "tilted")


def _strict_merge(raw):
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigurationError(
            f"unknown config section(s) {unknown}; allowed: {sorted(DEFAULTS)}")
    out = copy.deepcopy(DEFAULTS)
    for name, section in raw.items():
        if not isinstance(section, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        bad = sorted(set(section) - set(DEFAULTS[name]))
        if bad:
            raise ConfigurationError(
                f"unknown key(s) in [{name}]: {bad}; allowed: {sorted(DEFAULTS[name])}")
        out[name].update(section)
    return out


def _choice(value, allowed, name):
    if value not in allowed:
        raise ConfigurationError(f"{name} must be one of {allowed}, got {value!r}")
    return value


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Merged configuration.

    Parameters
    ----------
    sections : dict
        Section name -> key -> value, defaults filled in.
    base_dir : str
        Directory relative paths in the config are resolved against.
    """

    sections: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: str = "."

    def __post_init__(self):
        s = self.sections
        self.domain_spec  # noqa: B018 -- validates eagerly
        q = check_q(s["hjb"]["q"])
        for key in ("gamma",):
            for sec in ("mfg", "kfp"):
                if s[sec][key] is not None:
                    check_gamma(s[sec][key], q)
        _choice(s["kfp"]["drift"], KFP_DRIFTS, "[kfp] drift")
        _choice(s["particles"]["drift"], PARTICLE_DRIFTS, "[particles] drift")
        _choice(s["mfg"]["initial"], INITIAL, "[mfg] initial")
        check_int(s["particles"]["seed"], "seed", low=0)
        self.coupling  # noqa: B018

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        return cls(_strict_merge(raw or {}), base_dir)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path!r}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"config {path!r} is not valid TOML: {exc}") from exc
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))

    def with_seed(self, seed):
        s = copy.deepcopy(self.sections)
        s["particles"]["seed"] = int(seed)
        return RunConfig(s, self.base_dir)

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    # builders ------------------------------------------------------------

    @cached_property
    def domain_spec(self):
        d = self.sections["domain"]
        return DomainSpec(kind=d["kind"], extents=tuple(np.atleast_1d(d["extents"])),
                          resolution=d["resolution"], epsilon0=d["epsilon0"],
                          smoothing_width=d["smoothing_width"])

    @cached_property
    def domain(self):
        return build_domain(self.domain_spec)

    @property
    def q(self):
        return float(self.sections["hjb"]["q"])

    @property
    def seed(self):
        return int(self.sections["particles"]["seed"])

    @cached_property
    def coupling(self):
        from .coupling import coupling_from_config

        c = dict(self.sections["coupling"])
        lf = c.get("local_f")
        if isinstance(lf, str) and lf.startswith("table:"):
            c["local_f"] = "table:" + self._path(lf[len("table:"):])
        if c.get("monotone") is None:
            c.pop("monotone")
        return coupling_from_config(c)

    def rhs(self, domain=None):
        """Node values of g for the standalone HJB solve."""
        h = self.sections["hjb"]
        dom = self.domain if domain is None else domain
        if h["rhs_table"] is not None:
            header, data = read_field_csv(self._path(h["rhs_table"]))
            if data.shape[0] != dom.n_nodes:
                raise ConfigurationError(
                    f"rhs_table has {data.shape[0]} rows for {dom.n_nodes} nodes")
            g = data[:, -1]
        else:
            g = sin_profile(dom, float(h["rhs_amplitude"]))
        return g + float(h["rhs_shift"])

    def hjb_problem(self, domain=None, g=None):
        h = self.sections["hjb"]
        dom = self.domain if domain is None else domain
        return HJBProblem(dom, h["q"], self.rhs(dom) if g is None else g, h["x0"],
                          h["boundary_layer"], tuple(h["lambda_schedule"]), h["tol"],
                          h["max_iter"], h["cross_check_tol"])

    def mfg_config(self, domain=None):
        from .mfg import MFGConfig

        h, m = self.sections["hjb"], self.sections["mfg"]
        dom = self.domain if domain is None else domain
        return MFGConfig(dom, h["q"], self.coupling, m["gamma"], tuple(m["delta_schedule"]),
                         m["theta"], m["fp_tolerance"], m["max_iterations"], h["x0"],
                         m["alpha"], m["holder_radius"], h["boundary_layer"],
                         tuple(h["lambda_schedule"]), h["tol"])

    def sweep_plan(self):
        from .asymptotics import plan_from_config

        sw = {k: v for k, v in self.sections["sweep"].items() if v is not None}
        return plan_from_config(sw, self.domain_spec)

    def resolved(self):
        """JSON-ready copy of all sections with derived defaults filled in."""
        out = copy.deepcopy(self.sections)
        q = self.q
        if out["mfg"]["gamma"] is None:
            from ._validation import gamma_interval
            lo, hi = gamma_interval(q)
            out["mfg"]["gamma"] = 0.5 * (lo + hi)
        out["domain"]["extents"] = list(self.domain_spec.extents)
        out["domain"]["h"] = self.domain_spec.h
        out["coupling"]["monotone"] = bool(self.coupling.monotone)
        return out


def load_config(path=None):
    """Read ``path`` (or use the defaults when ``None``)."""
    return RunConfig() if path is None else RunConfig.from_file(path)
