"""Couplings F(x; m): non-local kernels and bounded local functions."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from ._validation import check_scalar
from .domain import GridField, extend_holder
from .exceptions import ConfigurationError

KINDS = ("nonlocal_kernel", "local_function")

_LOCAL = {
    "tanh": (np.tanh, 1.0, True),
    "atan": (np.arctan, np.pi / 2.0, True),
    "neg_tanh": (lambda x: -np.tanh(x), 1.0, False),
    "constant": (None, None, True),
}


def _load_table(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    try:
        data = np.array([[float(v) for v in r[:2]] for r in rows], dtype=float)
    except ValueError:
        data = np.array([[float(v) for v in r[:2]] for r in rows[1:]], dtype=float)
    if data.ndim != 2 or len(data) < 2 or np.any(np.diff(data[:, 0]) <= 0):
        raise ConfigurationError(f"table {path!r} needs >= 2 rows with increasing abscissae")
    return data[:, 0], data[:, 1]


@dataclass(frozen=True, eq=False)
class Coupling:
    """Specification of the coupling F(x; m).

    Parameters
    ----------
    kind : {"nonlocal_kernel", "local_function"}
    bandwidth : float
        Standard deviation of the Gaussian mollifier (non-local kind).
    local_f : str
        ``"tanh"``, ``"atan"``, ``"neg_tanh"``, ``"constant"`` or
        ``"table:<path>"`` (two-column CSV, linear interpolation, constant
        extrapolation).
    strength : float
        Multiplier applied to the output.  For ``"constant"`` this is the
        constant value.
    monotone : bool or None
        Asserted Lasry-Lions monotonicity.  ``None`` infers it; asserting it
        for a non-monotone coupling is an error.
    """

    kind: str = "nonlocal_kernel"
    bandwidth: float = 0.1
    local_f: str = "tanh"
    strength: float = 1.0
    monotone: bool = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"coupling kind must be one of {KINDS}")
        check_scalar(self.strength, "strength")
        if self.kind == "nonlocal_kernel":
            check_scalar(self.bandwidth, "bandwidth", low=0.0, closed_low=False)
            natural = self.strength >= 0
        else:
            natural = self._local_spec()[2]
        if self.monotone is None:
            object.__setattr__(self, "monotone", bool(natural))
        elif self.monotone and not natural:
            raise ConfigurationError("monotone flag set on a non-monotone coupling")

    def _local_spec(self):
        name = self.local_f
        if isinstance(name, str) and name.startswith("table:"):
            xs, ys = _load_table(name[len("table:"):])
            f = lambda v: np.interp(v, xs, ys)  # noqa: E731
            mono = bool(np.all(np.diff(ys) >= 0)) and self.strength >= 0
            return f, float(np.max(np.abs(ys))), mono
        if name not in _LOCAL:
            raise ConfigurationError(
                f"local_f must be one of {sorted(_LOCAL)} or 'table:<path>', got {name!r}")
        f, bound, mono = _LOCAL[name]
        if name == "constant":
            return (lambda v: np.ones_like(v)), 1.0, True
        return f, bound, mono if self.strength >= 0 else not mono

    @property
    def is_local(self):
        return self.kind == "local_function"

    def kernel_matrix_max(self, domain):
        """max_ij K_ij of the renormalized kernel on ``domain``."""
        z = _renorm(domain, self.bandwidth)
        k0 = _gauss_peak(domain.dim, self.bandwidth)
        return float(k0 / np.min(z))

    def bound_on(self, domain):
        """Sup-norm bound of the output on unit-mass densities."""
        if self.is_local:
            return abs(self.strength) * self._local_spec()[1]
        return abs(self.strength) * self.kernel_matrix_max(domain)

    def lipschitz_on(self, domain):
        """Constant L with ||F(m1) - F(m2)||_inf <= L ||m1 - m2||_L1 (non-local)."""
        if self.is_local:
            raise ConfigurationError("L1 -> Linf modulus is defined for non-local couplings")
        return self.bound_on(domain)


def _gauss_peak(dim, sigma):
    return (2.0 * np.pi * sigma ** 2) ** (-dim / 2.0)


def _kernel_box(domain, sigma):
    """Gaussian sampled on all box offsets (no truncation)."""
    axes = [np.arange(-(n - 1), n) * domain.h for n in domain.box_shape]
    grids = np.meshgrid(*axes, indexing="ij")
    r2 = sum(g * g for g in grids)
    return _gauss_peak(domain.dim, sigma) * np.exp(-r2 / (2.0 * sigma ** 2))


_CACHE = {}


def _conv(domain, sigma, values):
    key = (id(domain), sigma)
    ker = _CACHE.get(key)
    if ker is None or ker[0] is not domain:
        ker = (domain, _kernel_box(domain, sigma))
        _CACHE.clear()
        _CACHE[key] = ker
    box = domain.box_values(values, fill=0.0)
    full = fftconvolve(box, ker[1], mode="full")
    sl = tuple(slice(n - 1, 2 * n - 1) for n in domain.box_shape)
    return full[sl][tuple(domain.box_index.T)] * domain.cell_volume


def _renorm(domain, sigma):
    """Z_i = sum_j k(x_i - x_j) h^dim over nodes of the domain."""
    return _conv(domain, sigma, np.ones(domain.n_nodes))


def kernel_apply(domain, sigma, m):
    """(K m)_i with the symmetric renormalization K_ij = k_ij / sqrt(Z_i Z_j).

    The renormalized matrix is congruent to the (positive semidefinite)
    Gaussian Gram matrix, so it stays positive semidefinite.
    """
    z = np.sqrt(_renorm(domain, sigma))
    return _conv(domain, sigma, np.asarray(m, dtype=float) / z) / z


def evaluate(coupling, m, alpha=0.5):
    """F(x; m) on all nodes.

    For the local kind a density supported on a subdomain is first extended
    to the whole domain by the Hoelder inf-convolution.

    Parameters
    ----------
    coupling : Coupling
    m : Density or GridField
    alpha : float
        Hoelder exponent of the extension.

    Returns
    -------
    GridField
    """
    dom = m.domain
    if coupling.is_local:
        mask = getattr(m, "mask", None)
        vals = np.asarray(m.values, dtype=float)
        if mask is not None and not np.all(mask):
            vals = np.asarray(extend_holder(GridField(vals, dom, mask), alpha).values)
        f = coupling._local_spec()[0]
        if coupling.local_f == "constant":
            return GridField(np.full(dom.n_nodes, float(coupling.strength)), dom)
        return GridField(coupling.strength * f(vals), dom)
    out = coupling.strength * kernel_apply(dom, coupling.bandwidth, m.values)
    return GridField(out, dom)


def monotonicity_probe(coupling, m1, m2, alpha=0.5):
    """Quadrature of (F(m1) - F(m2)) (m1 - m2) over the domain."""
    if m1.domain is not m2.domain:
        raise ConfigurationError("densities live on different grids")
    if not np.array_equal(np.asarray(m1.mask), np.asarray(m2.mask)):
        raise ConfigurationError("densities must share the same support mask")
    f1 = evaluate(coupling, m1, alpha).values
    f2 = evaluate(coupling, m2, alpha).values
    diff = np.asarray(m1.values) - np.asarray(m2.values)
    return float(np.sum((f1 - f2) * diff) * m1.domain.cell_volume)


def coupling_from_config(section):
    """Build a :class:`Coupling` from a config mapping."""
    keys = {"kind", "kernel_bandwidth", "local_f", "monotone", "strength"}
    extra = set(section) - keys
    if extra:
        raise ConfigurationError(f"unknown coupling keys: {sorted(extra)}")
    kind = section.get("kind", "nonlocal_kernel")
    aliases = {"nonlocal": "nonlocal_kernel", "local": "local_function"}
    return Coupling(kind=aliases.get(kind, kind),
                    bandwidth=section.get("kernel_bandwidth", 0.1),
                    local_f=section.get("local_f", "tanh"),
                    strength=section.get("strength", 1.0),
                    monotone=section.get("monotone", None))
