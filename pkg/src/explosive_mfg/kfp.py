"""Stationary Kolmogorov-Fokker-Planck solvers and density diagnostics.

The equation ``Lap m + div(m b) = 0`` is discretized in flux form with
Scharfetter-Gummel (exponentially fitted) face fluxes.  Equivalently, the
scheme is the stationary law of a continuous-time Markov chain on the grid
whose generator ``G`` approximates ``Lap - b . D``; the KFP matrix is
``G.T``.  With positive rates in both directions across every face the
chain is irreducible, so the null vector is unique and positive.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator

from ._validation import check_decreasing, check_scalar
from .exceptions import ConfigurationError, LyapunovSpecError, StructuralError, TightnessError
from .hjb import drift_limit, extrapolate_to_boundary

log = logging.getLogger(__name__)


def bernoulli(z):
    """B(z) = z / (exp(z) - 1), with B(0) = 1."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    out = zs / np.expm1(zs)
    return np.where(small, 1.0 - z / 2.0 + z * z / 12.0, out)


@dataclass(frozen=True, eq=False)
class Density:
    """A non-negative grid density with unit midpoint-rule mass.

    Attributes
    ----------
    values : ndarray
        Node values (zero outside ``mask``).
    mask : ndarray of bool
        Support (Omega_delta for the Neumann problem).
    domain : Domain
    delta : float or None
        Width of the excluded boundary strip, when the density lives on a
        subdomain.
    """

    values: np.ndarray
    mask: np.ndarray
    domain: object
    delta: float = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        m = np.array(self.mask, dtype=bool)
        v[~m] = 0.0
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise StructuralError("density must be finite and non-negative")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def mass(self):
        return float(np.sum(self.values) * self.domain.cell_volume)

    @classmethod
    def from_values(cls, domain, values, mask=None, delta=None):
        """Normalize ``values`` to unit mass on ``mask``."""
        mask = np.ones(domain.n_nodes, dtype=bool) if mask is None else np.asarray(mask, bool)
        v = np.where(mask, np.asarray(values, dtype=float), 0.0)
        total = np.sum(v) * domain.cell_volume
        if not total > 0:
            raise ConfigurationError("density must have positive mass")
        return cls(v / total, mask, domain, delta)

    @classmethod
    def uniform(cls, domain, mask=None, delta=None):
        return cls.from_values(domain, np.ones(domain.n_nodes), mask, delta)

    def l1_distance(self, other):
        """Midpoint-rule L1 distance (densities taken as zero off their masks)."""
        return float(np.sum(np.abs(self.values - other.values)) * self.domain.cell_volume)

    def to_csv(self, path):
        self.domain.dump_csv(path, self.values, name="m")


# generator and operators ----------------------------------------------------

def _face_rates(drift, mask):
    """Yield (lo, hi, rate lo->hi, rate hi->lo) for faces inside ``mask``."""
    h = drift.domain.h
    for lo, hi, bn in drift.faces:
        ok = mask[lo] & mask[hi]
        lo, hi, bn = lo[ok], hi[ok], bn[ok]
        z = bn * h
        yield lo, hi, bernoulli(z) / h ** 2, bernoulli(-z) / h ** 2


def generator(drift, mask=None):
    """Markov generator G on ``mask`` (rows sum to zero), G ~ Lap - b . D.

    Returns a CSR matrix of shape (n_mask, n_mask) in mask order.
    """
    dom = drift.domain
    mask = np.ones(dom.n_nodes, dtype=bool) if mask is None else np.asarray(mask, bool)
    idx = np.full(dom.n_nodes, -1, dtype=np.int64)
    idx[mask] = np.arange(mask.sum())
    rows, cols, vals = [], [], []
    for lo, hi, r_up, r_down in _face_rates(drift, mask):
        a, b = idx[lo], idx[hi]
        rows += [a, b]
        cols += [b, a]
        vals += [r_up, r_down]
    n = int(mask.sum())
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def linearized_hjb_operator(drift, mask=None):
    """Discrete ``-Lap v + b . Dv`` (row form), i.e. ``-G``."""
    return (-generator(drift, mask)).tocsr()


def kfp_operator(drift, mask=None):
    """Flux-form KFP matrix A with (A m)_i = net inflow at node i.

    Assembled face by face from the Scharfetter-Gummel flux
    ``F = (B(-z) m_hi - B(z) m_lo) / h`` (``z = b h``), which enters node
    ``lo`` with a plus sign and node ``hi`` with a minus sign.
    """
    dom = drift.domain
    mask = np.ones(dom.n_nodes, dtype=bool) if mask is None else np.asarray(mask, bool)
    idx = np.full(dom.n_nodes, -1, dtype=np.int64)
    idx[mask] = np.arange(mask.sum())
    h = dom.h
    rows, cols, vals = [], [], []
    for lo, hi, bn in drift.faces:
        ok = mask[lo] & mask[hi]
        a, b = idx[lo[ok]], idx[hi[ok]]
        z = bn[ok] * h
        cp, cm = bernoulli(-z) / h ** 2, bernoulli(z) / h ** 2
        # flux into lo: +cp m_b - cm m_a ; into hi: the negative
        rows += [a, a, b, b]
        cols += [b, a, b, a]
        vals += [cp, -cm, -cp, cm]
    n = int(mask.sum())
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _null_vector(A, n_iter=6):
    """Positive null vector of the singular M-matrix -A by shifted inverse iteration."""
    n = A.shape[0]
    M = (-A).tocsc()
    scale = float(np.max(np.abs(M.diagonal()))) if n else 1.0
    shift = 1e-10 * scale
    lu = spla.splu((M + shift * sp.identity(n, format="csc")).tocsc())
    x = np.full(n, 1.0 / n)
    for _ in range(n_iter):
        y = lu.solve(x)
        y = np.abs(y)  # entries are positive up to rounding
        x = y / y.sum()
    return x


def solve_kfp_neumann(drift, delta=None, mask=None):
    """Neumann (no-flux) stationary density on Omega_delta.

    Parameters
    ----------
    drift : DriftField
    delta : float, optional
        Subdomain parameter (>= 2h).  ``mask`` overrides it.
    mask : ndarray of bool, optional

    Returns
    -------
    Density

    Raises
    ------
    StructuralError
        If the flux graph on the mask is not connected (kernel dimension
        larger than one).
    """
    dom = drift.domain
    if mask is None:
        if delta is None:
            raise ConfigurationError("give delta or mask")
        delta = check_scalar(delta, "delta", low=0.0)
        if delta < 2.0 * dom.h - 1e-12:
            raise ConfigurationError(f"delta={delta:g} must be >= 2h={2 * dom.h:g}")
        mask = dom.subdomain_mask(delta)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ConfigurationError("empty support mask")
    for lo, hi, bn in drift.faces:
        ok = mask[lo] & mask[hi]
        if not np.all(np.isfinite(bn[ok])):
            raise ConfigurationError("drift is not finite on the support")
    G = generator(drift, mask)
    pattern = G.copy()
    pattern.data = (np.abs(pattern.data) > 0).astype(float)
    ncomp, _ = connected_components(pattern, directed=True, connection="strong")
    if ncomp != 1:
        raise StructuralError(f"KFP operator has a {ncomp}-dimensional kernel")
    A = G.T.tocsr()
    x = _null_vector(A)
    values = np.zeros(dom.n_nodes)
    values[mask] = x
    return Density.from_values(dom, values, mask, delta)


def kfp_residual(density, drift):
    """Max-norm of G^T m on the density's support."""
    A = generator(drift, density.mask).T
    return float(np.max(np.abs(A @ density.values[density.mask])))


def drift_asymptotic_constant(drift, min_band=3, d_max=None):
    """Extrapolated boundary limit of (b . nu) d (0 for bounded drifts)."""
    dom = drift.domain
    d_max = dom.spec.epsilon0 / 2.0 if d_max is None else d_max
    band = dom.band_index()
    bnu = drift.normal_component()
    keep = (band >= min_band) & (dom.d_exact <= d_max)
    ids = np.unique(band[keep])
    if len(ids) < 3:
        raise ConfigurationError("too few node bands to estimate the drift constant")
    d = np.array([dom.d_exact[keep & (band == k)].mean() for k in ids])
    s = np.array([bnu[keep & (band == k)].mean() for k in ids]) * d
    c, _ = extrapolate_to_boundary(d, s, dom.h)
    return c


def default_continuation(domain):
    """Dyadic schedule 0.1, 0.05, ... down to the last value above 2h, then 2h."""
    out = [0.1]
    while out[-1] / 2.0 > 2.0 * domain.h * (1 + 1e-9):
        out.append(out[-1] / 2.0)
    out.append(2.0 * domain.h)
    return out


@dataclass
class ContinuationResult:
    density: object
    members: list
    deltas: list
    l1_differences: list
    escaping_mass: list
    drift_constant: float


def solve_kfp_whole(drift, continuation=None, check=True, min_constant=1.0,
                    return_details=False):
    """Whole-domain proper density as the delta -> 2h limit of Neumann solves.

    Parameters
    ----------
    drift : DriftField
        Must satisfy (b . nu) d -> C > 1 at the boundary.
    continuation : list of float, optional
        Strictly decreasing deltas ending at >= 2h; defaults to
        :func:`default_continuation`.
    check : bool
        Run the L1 Cauchy test across members.
    return_details : bool
        Return a :class:`ContinuationResult` instead of the density.

    Raises
    ------
    ConfigurationError
        If the drift asymptotic constant is not above ``min_constant``.
    TightnessError
        If successive L1 differences do not decrease.
    """
    dom = drift.domain
    C = drift_asymptotic_constant(drift)
    if not C > min_constant:
        raise ConfigurationError(
            f"drift boundary constant (b.nu)d -> {C:.4g} is not > {min_constant:g}; "
            "the drift does not confine the density")
    deltas = default_continuation(dom) if continuation is None else \
        check_decreasing(continuation, "continuation")
    if deltas[-1] < 2.0 * dom.h - 1e-12:
        raise ConfigurationError("final continuation delta must be >= 2h")
    members = [solve_kfp_neumann(drift, delta=dl) for dl in deltas]
    diffs = [a.l1_distance(b) for a, b in zip(members, members[1:])]
    escaping = [float(np.sum(m.values[~dom.subdomain_mask(deltas[0])]) * dom.cell_volume)
                for m in members]
    if check and len(diffs) >= 2:
        bad = [i for i in range(1, len(diffs)) if not diffs[i] < diffs[i - 1]]
        if bad:
            raise TightnessError(
                f"L1 Cauchy test failed along the continuation: {diffs}",
                trace=diffs, profile=escaping)
    final = members[-1]
    if return_details:
        return ContinuationResult(final, members, deltas, diffs, escaping, C)
    return final


# weighted norms -------------------------------------------------------------

def dyadic_band_sums(density, gamma, distance="exact"):
    """Partial sums of d^-gamma m over dyadic bands (2^-j-1, 2^-j] of d.

    Only bands whose lower edge is at least one grid spacing are returned.
    """
    dom = density.domain
    d = dom.d_exact if distance == "exact" else dom.d
    mask = density.mask
    out = []
    j = 0
    top = float(np.max(d[mask]))
    jmin = int(np.floor(-np.log2(top)))
    j = jmin
    while 2.0 ** (-j - 1) >= dom.h:
        sel = mask & (d > 2.0 ** (-j - 1)) & (d <= 2.0 ** (-j))
        out.append((2.0 ** (-j - 1), float(np.sum(d[sel] ** -gamma * density.values[sel])
                                           * dom.cell_volume)))
        j += 1
    return out


def weighted_norm(density, gamma, distance="exact", return_details=False):
    """W_gamma norm: midpoint quadrature of d^-gamma m over the support.

    Returns ``inf`` when the dyadic-band partial sums grow (ratio >= 1)
    across the last three bands, which flags a non-integrable weight.
    """
    gamma = check_scalar(gamma, "gamma", low=0.0, closed_low=False)
    dom = density.domain
    d = dom.d_exact if distance == "exact" else dom.d
    mask = density.mask & (d > 0)
    value = float(np.sum(d[mask] ** -gamma * density.values[mask]) * dom.cell_volume)
    bands = dyadic_band_sums(density, gamma, distance)
    sums = [s for _, s in bands]
    diverged = False
    if len(sums) >= 3:
        last = sums[-3:]
        diverged = all(b > 0 and a > 0 and b / a >= 1.0 for a, b in zip(last, last[1:]))
    if diverged:
        value = float("inf")
    if return_details:
        return value, {"diverged": diverged, "bands": bands}
    return value


def weighted_difference(m1, m2, gamma):
    """W_gamma norm of m1 - m2 (no divergence test)."""
    dom = m1.domain
    mask = (m1.mask | m2.mask) & (dom.d_exact > 0)
    diff = np.abs(m1.values - m2.values)
    return float(np.sum(dom.d_exact[mask] ** -gamma * diff[mask]) * dom.cell_volume)


# Lyapunov certificate -------------------------------------------------------

@dataclass(frozen=True)
class LyapunovSpec:
    """Lyapunov function V = d^(1 - C + epsilon).

    ``delta_star=None`` selects the largest grid-aligned threshold (capped at
    epsilon0) for which the generator applied to V is <= -1 at every support
    node with d <= delta_star.
    """

    C: float
    epsilon: float
    delta_star: float = None

    def __post_init__(self):
        check_scalar(self.C, "C", low=1.0, closed_low=False)
        check_scalar(self.epsilon, "epsilon", 0.0, self.C - 1.0, False, False)

    @property
    def exponent(self):
        return 1.0 - self.C + self.epsilon

    @classmethod
    def for_q(cls, q, epsilon=None):
        C = drift_limit(q)
        return cls(C, (C - 1.0) / 2.0 if epsilon is None else epsilon)


@dataclass
class CertificateReport:
    S: float
    delta_star: float
    band_table: list
    passed: bool
    max_ratio: float
    weighted_norm: float
    exponent: float
    weight_exponent: float
    drift_constant: float
    analytic_max_LV: float = None
    tolerance: float = 1e-6

    def to_dict(self):
        d = dict(self.__dict__)
        d["pass"] = d.pop("passed")
        return d


def lyapunov_certificate(drift, density, spec, deltas=None, rtol=1e-6):
    """Tightness certificate for ``density`` under ``drift``.

    The generator is the one the density is stationary for, so the
    cut-off argument ``sum m G min(V, s) = 0`` applies verbatim on the grid:
    every band integral of |GV| m over Omega_delta is at most 2 S, where
    S is the integral over Omega_{delta*}.

    Parameters
    ----------
    drift : DriftField
    density : Density
    spec : LyapunovSpec
    deltas : list of float, optional
        Band thresholds; defaults to dyadic halvings of delta* down to the
        support edge.
    rtol : float
        Pass when every band integral <= 2 S (1 + rtol).

    Raises
    ------
    LyapunovSpecError
        If the drift constant is not above 1, or the requested delta* does
        not satisfy GV <= -1 on the boundary strip.
    """
    dom = drift.domain
    C_est = drift_asymptotic_constant(drift)
    if not C_est > 1.0:
        raise LyapunovSpecError(
            f"drift boundary constant {C_est:.4g} is not > 1; no Lyapunov function of this form")
    mask = density.mask
    k = spec.exponent
    d = dom.d
    V = d[mask] ** k
    G = generator(drift, mask)
    LV = G @ V
    dm = dom.d_exact[mask]
    m = density.values[mask]
    vol = dom.cell_volume

    if spec.delta_star is None:
        bad = dm[LV > -1.0]
        first_bad = bad.min() if bad.size else np.inf
        ok = dm[(dm < first_bad) & (dm <= dom.spec.epsilon0)]
        if ok.size == 0:
            raise LyapunovSpecError("GV <= -1 fails already at the outermost support layer")
        delta_star = float(ok.max())
    else:
        delta_star = float(spec.delta_star)
        if np.any(LV[dm <= delta_star] > -1.0):
            raise LyapunovSpecError(
                f"GV <= -1 fails within distance {delta_star:g} of the boundary")
    S = float(np.sum(np.abs(LV[dm > delta_star]) * m[dm > delta_star]) * vol)
    if deltas is None:
        deltas = []
        t = delta_star
        while t > dm.min():
            deltas.append(t)
            t /= 2.0
        deltas.append(float(dm.min()) - 0.5 * dom.h)
    table = []
    for dl in deltas:
        sel = dm > dl
        val = float(np.sum(np.abs(LV[sel]) * m[sel]) * vol)
        table.append({"delta": float(dl), "integral": val,
                      "ratio": val / (2.0 * S) if S > 0 else np.inf})
    max_ratio = max(r["ratio"] for r in table)
    passed = bool(max_ratio <= 1.0 + rtol)

    # continuous-formula LV for comparison
    grad = dom.grad_d[mask]
    b = drift.b[mask]
    dd = d[mask]
    LVa = (k * dd ** (k - 1) * dom.laplacian_d[mask]
           + k * (k - 1) * dd ** (k - 2) * np.sum(grad * grad, axis=1)
           - k * dd ** (k - 1) * np.sum(b * grad, axis=1))
    weight_exp = -spec.C - 1.0 + spec.epsilon
    wn = float(np.sum(dm ** weight_exp * m) * vol)
    return CertificateReport(
        S=S, delta_star=delta_star, band_table=table, passed=passed, max_ratio=max_ratio,
        weighted_norm=wn, exponent=k, weight_exponent=weight_exp, drift_constant=C_est,
        analytic_max_LV=float(np.max(LVa[dm <= delta_star])), tolerance=rtol)


# weak formulation -----------------------------------------------------------

def bump(points, center, radius, power=4):
    """Polynomial bump (1 - |x-c|^2/r^2)^power_+ with gradient and Laplacian.

    ``power >= 3`` gives a C^2 test function; the default 4 makes the
    Laplacian C^1, so midpoint quadrature of the weak form stays O(h^2)
    without a kink term at the support edge.
    """
    x = np.asarray(points, dtype=float)
    k = int(power)
    if k < 3:
        raise ConfigurationError("bump power must be >= 3 for a C^2 test function")
    y = (x - center) / radius
    r2 = np.sum(y * y, axis=1)
    s = np.maximum(1.0 - r2, 0.0)
    phi = s ** k
    grad = (-2.0 * k * s ** (k - 1))[:, None] * y / radius
    n = x.shape[1]
    lap = (4.0 * k * (k - 1) * s ** (k - 2) * r2 - 2.0 * n * k * s ** (k - 1)) / radius ** 2
    return phi, grad, lap


def weak_residuals(density, drift, n_tests=10, seed=0, margin=0.05, radius=(0.15, 0.35)):
    """|integral (Lap phi - b . D phi) m| for random compactly supported bumps.

    Bump supports are kept inside Omega_margin.
    """
    dom = drift.domain
    rng = np.random.default_rng(seed)
    out = []
    pts = dom.nodes
    mask = density.mask
    while len(out) < n_tests:
        r = rng.uniform(*radius)
        c = dom.nodes[rng.integers(dom.n_nodes)]
        d_c, _ = dom.exact_distance(c[None, :])
        if d_c[0] < r + margin:
            continue
        phi, grad, lap = bump(pts, c, r)
        integrand = lap - np.sum(drift.b * grad, axis=1)
        out.append(abs(float(np.sum((integrand * density.values)[mask]) * dom.cell_volume)))
    return out


def harnack_ratio(density, delta):
    """sup/inf of m over Omega_delta."""
    sel = density.domain.subdomain_mask(delta) & density.mask
    v = density.values[sel]
    return float(v.max() / v.min())


def decay_exponent(density, d_range=None):
    """Slope of log m vs log d near the boundary (reported, not asserted)."""
    dom = density.domain
    lo, hi = d_range if d_range is not None else (4 * dom.h, dom.spec.epsilon0 / 2.0)
    sel = density.mask & (dom.d_exact >= lo) & (dom.d_exact <= hi) & (density.values > 0)
    if sel.sum() < 3:
        return float("nan")
    return float(np.polyfit(np.log(dom.d_exact[sel]), np.log(density.values[sel]), 1)[0])


class FokkerPlanck(BaseEstimator):
    """Estimator front end for the stationary KFP solvers.

    Parameters
    ----------
    delta : float or None
        Solve the Neumann problem on Omega_delta; None solves the
        whole-domain problem by continuation.
    continuation : list of float or None

    Attributes
    ----------
    density_ : Density
    m_ : ndarray
    """

    def __init__(self, delta=None, continuation=None):
        self.delta = delta
        self.continuation = continuation

    def fit(self, drift):
        if self.delta is not None:
            self.density_ = solve_kfp_neumann(drift, delta=self.delta)
        else:
            self.density_ = solve_kfp_whole(drift, continuation=self.continuation)
        self.m_ = np.asarray(self.density_.values)
        return self

    def predict(self, points):
        dom = self.density_.domain
        if dom.dim == 1:
            return np.interp(np.asarray(points, dtype=float).ravel(), dom.nodes[:, 0], self.m_)
        return np.array([self.m_[dom.nearest_node(p)] for p in np.reshape(points, (-1, 2))])
