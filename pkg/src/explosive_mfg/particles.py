"""Monte Carlo check of the state constraint.

Particles follow ``dX = -b(X) dt + sqrt(2) dB`` under a grid drift.  Each
particle integrates on its own clock with Euler-Maruyama steps that shrink
quadratically in the distance to the boundary inside a safety band, and
draws its noise from a counter-based stream keyed by (seed, particle index),
so results do not depend on how particles are scheduled.

Below ``d = 2h`` the interpolated drift is replaced by the boundary profile
``b = (C / d) nu`` with ``C`` the extrapolated limit of ``(b . nu) d``.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from ._validation import check_int, check_scalar
from .domain import write_field_csv
from .exceptions import ConfigurationError, StepSizeError

log = logging.getLogger(__name__)

_KIND_CODE = {"interval": 0, "rectangle": 1, "disk": 2}
MAX_HALVINGS = 4

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _uniform(key, k):
    z = _mix(key + np.uint64(k) * _GAMMA)
    return ((z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


def stream_key(seed, index):
    """Key of the random stream of particle ``index``."""
    return int(_mix(np.uint64(_mix(np.uint64(seed) + _GAMMA)) + np.uint64(index)))


@numba.njit(cache=True, inline="always")
def _distance(kind, ext, x, nu):
    """Exact distance; writes the outward normal into ``nu``."""
    if kind == 0:
        if x[0] < ext[0] / 2.0:
            nu[0] = -1.0
            return x[0]
        nu[0] = 1.0
        return ext[0] - x[0]
    if kind == 1:
        d = x[0]
        nu[0], nu[1] = -1.0, 0.0
        if ext[0] - x[0] < d:
            d = ext[0] - x[0]
            nu[0] = 1.0
        if x[1] < d:
            d = x[1]
            nu[0], nu[1] = 0.0, -1.0
        if ext[1] - x[1] < d:
            d = ext[1] - x[1]
            nu[0], nu[1] = 0.0, 1.0
        return d
    r = np.sqrt(x[0] * x[0] + x[1] * x[1])
    if r > 0.0:
        nu[0], nu[1] = x[0] / r, x[1] / r
    else:
        nu[0], nu[1] = 1.0, 0.0
    return ext[0] - r


@numba.njit(cache=True, inline="always")
def _interp(box_b, node_of_box, origin, h, x, out):
    """Multilinear interpolation of node drift; False if a corner is missing."""
    dim = x.shape[0]
    nx, ny = node_of_box.shape
    fx = (x[0] - origin[0]) / h
    ix = int(np.floor(fx))
    wx = fx - ix
    if ix < 0 or ix + 1 >= nx:
        return False
    if dim == 1:
        a, b = node_of_box[ix, 0], node_of_box[ix + 1, 0]
        out[0] = (1.0 - wx) * box_b[a, 0] + wx * box_b[b, 0]
        return True
    fy = (x[1] - origin[1]) / h
    iy = int(np.floor(fy))
    wy = fy - iy
    if iy < 0 or iy + 1 >= ny:
        return False
    n00, n10 = node_of_box[ix, iy], node_of_box[ix + 1, iy]
    n01, n11 = node_of_box[ix, iy + 1], node_of_box[ix + 1, iy + 1]
    if n00 < 0 or n10 < 0 or n01 < 0 or n11 < 0:
        return False
    for k in range(2):
        out[k] = ((1.0 - wx) * (1.0 - wy) * box_b[n00, k] + wx * (1.0 - wy) * box_b[n10, k]
                  + (1.0 - wx) * wy * box_b[n01, k] + wx * wy * box_b[n11, k])
    return True


@numba.njit(cache=True, inline="always")
def _bin(node_of_box, origin, h, x):
    """Nearest node to ``x`` (searching the 3x3 box neighbourhood if needed)."""
    nx, ny = node_of_box.shape
    ix = min(max(int(np.floor((x[0] - origin[0]) / h + 0.5)), 0), nx - 1)
    if x.shape[0] == 1:
        return node_of_box[ix, 0]
    iy = min(max(int(np.floor((x[1] - origin[1]) / h + 0.5)), 0), ny - 1)
    best, best_d = node_of_box[ix, iy], np.inf
    if best >= 0:
        return best
    for jx in range(max(ix - 1, 0), min(ix + 2, nx)):
        for jy in range(max(iy - 1, 0), min(iy + 2, ny)):
            n = node_of_box[jx, jy]
            if n >= 0:
                dx = origin[0] + jx * h - x[0]
                dy = origin[1] + jy * h - x[1]
                if dx * dx + dy * dy < best_d:
                    best, best_d = n, dx * dx + dy * dy
    return best


@numba.njit(cache=True)
def _run(kind, ext, h, origin, box_b, node_of_box, C, starts, keys, T, base_dt, band,
         hist, exited, min_d, n_steps):
    """Integrate every particle to T.  Returns 1 on a non-finite state."""
    n, dim = starts.shape
    half = 0.5 * T
    floor = base_dt * (h / band) ** 2
    x = np.empty(dim)
    b = np.empty(dim)
    nu = np.empty(dim)
    xi = np.empty(2)
    for p in range(n):
        key = np.uint64(keys[p])
        for k in range(dim):
            x[k] = starts[p, k]
        t = 0.0
        counter = 0
        spare = False
        d = _distance(kind, ext, x, nu)
        dmin = d
        steps = 0
        while t < T:
            if d < 2.0 * h or not _interp(box_b, node_of_box, origin, h, x, b):
                for k in range(dim):
                    b[k] = C / d * nu[k]
            s = d / band
            dt = base_dt * min(1.0, s * s)
            # (b . nu) d < 1 leaves the wall attainable; dt ~ d^2 would never reach it
            bn = 0.0
            for k in range(dim):
                bn += b[k] * nu[k]
            if bn * d < 1.0:
                dt = max(dt, floor)
            if t + dt > T:
                dt = T - t
            # Box-Muller pairs; in 1D the second normal serves the next step
            if dim == 2 or not spare:
                r = np.sqrt(-2.0 * np.log(_uniform(key, counter)))
                a = 2.0 * np.pi * _uniform(key, counter + 1)
                counter += 2
                xi[0] = r * np.cos(a)
                xi[1] = r * np.sin(a)
                z0 = xi[0]
                spare = dim == 1
            else:
                z0 = xi[1]
                spare = False
            if t + dt > half:
                node = _bin(node_of_box, origin, h, x)
                if node >= 0:
                    hist[node] += t + dt - max(t, half)
            sq = np.sqrt(2.0 * dt)
            x[0] = x[0] - b[0] * dt + sq * z0
            if dim == 2:
                x[1] = x[1] - b[1] * dt + sq * xi[1]
            for k in range(dim):
                if not np.isfinite(x[k]):
                    return 1
            t += dt
            steps += 1
            d = _distance(kind, ext, x, nu)
            if d < dmin:
                dmin = d
            if d <= 0.0:
                exited[p] = True
                break
        min_d[p] = dmin
        n_steps[p] = steps
    return 0


@dataclass(frozen=True, eq=False)
class ParticleConfig:
    """Settings of a particle ensemble.

    Parameters
    ----------
    drift : DriftField
    n_particles : int
    T : float
        Horizon.
    base_dt : float
        Step away from the boundary; must satisfy base_dt * max|b| < h on
        Omega_safety_band.
    seed : int
    safety_band : float
        Distance below which steps shrink like (d / safety_band)^2.
        Where the drift does not confine ((b . nu) d < 1) the shrinking stops
        at base_dt (h / safety_band)^2 so the wall stays reachable.
    start : array-like, optional
        A single start point or one per particle; the domain centre by
        default.
    boundary_constant : float, optional
        Limit of (b . nu) d used below d = 2h; estimated from the drift when
        omitted.
    """

    drift: object
    n_particles: int = 10_000
    T: float = 10.0
    base_dt: float = 2.5e-4
    seed: int = 0
    safety_band: float = 0.2
    start: object = None
    boundary_constant: float = None

    def __post_init__(self):
        dom = self.drift.domain
        check_int(self.n_particles, "n_particles", low=1)
        check_scalar(self.T, "T", low=0.0, closed_low=False)
        check_scalar(self.base_dt, "base_dt", low=0.0, closed_low=False)
        check_scalar(self.safety_band, "safety_band", low=2.0 * dom.h)
        check_int(self.seed, "seed", low=0)
        inner = dom.d_exact > self.safety_band
        bmax = float(np.max(np.linalg.norm(self.drift.b[inner], axis=1))) if inner.any() else 0.0
        if self.base_dt * bmax >= dom.h:
            raise ConfigurationError(
                f"base_dt * max|b| on the safety band interior is {self.base_dt * bmax:.3g}, "
                f"must stay below h = {dom.h:.3g}")

    @property
    def domain(self):
        return self.drift.domain

    def starts(self):
        dom = self.domain
        if self.start is None:
            pts = np.tile(dom.center, (self.n_particles, 1))
        else:
            pts = np.atleast_2d(np.asarray(self.start, dtype=float))
            if dom.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
                pts = pts.T
            if pts.shape[0] == 1:
                pts = np.tile(pts, (self.n_particles, 1))
        if pts.shape != (self.n_particles, dom.dim):
            raise ConfigurationError("start must be one point or one point per particle")
        d, _ = dom.exact_distance(pts)
        if np.any(d <= 0):
            raise ConfigurationError("start points must lie inside the domain")
        return pts


@dataclass
class EnsembleReport:
    """Outcome of :func:`simulate`."""

    exit_count: int
    exit_fraction: float
    min_distance: float
    tv_distance: float
    runtime: float
    histogram: np.ndarray = field(repr=False)
    n_particles: int = 0
    T: float = 0.0
    base_dt: float = 0.0
    step_halvings: int = 0
    total_steps: int = 0
    boundary_constant: float = 0.0
    certified: bool = False
    seed: int = 0

    def to_dict(self):
        out = asdict(self)
        out.pop("histogram")
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def histogram_csv(self, path, domain):
        write_field_csv(path, domain, self.histogram, name="probability")


def total_variation(histogram, density):
    """0.5 * sum |p_i - m_i h^dim| between a node histogram and a density."""
    dom = density.domain
    p = np.asarray(histogram, dtype=float)
    return 0.5 * float(np.sum(np.abs(p - np.asarray(density.values) * dom.cell_volume)))


def simulate(config, density=None):
    """Run the ensemble.

    Parameters
    ----------
    config : ParticleConfig
    density : Density, optional
        Grid density to compare the empirical law with.

    Returns
    -------
    EnsembleReport

    Raises
    ------
    StepSizeError
        If the state overflows even after repeated halving of base_dt.
    """
    from .kfp import drift_asymptotic_constant

    dom = config.domain
    C = config.boundary_constant
    if C is None:
        C = drift_asymptotic_constant(config.drift)
    kind = _KIND_CODE[dom.spec.kind]
    ext = np.array(list(dom.spec.extents) + [0.0] * (2 - len(dom.spec.extents)), dtype=float)
    nob = np.array(dom.node_of_box, dtype=np.int64)
    if nob.ndim == 1:
        nob = nob[:, None]
    origin = np.array(dom.box_origin, dtype=float)
    starts = config.starts()
    keys = np.array([stream_key(config.seed, i) for i in range(config.n_particles)],
                    dtype=np.uint64)
    box_b = np.array(config.drift.b, dtype=float)

    base_dt = config.base_dt
    t0 = time.perf_counter()
    for halvings in range(MAX_HALVINGS + 1):
        hist = np.zeros(dom.n_nodes)
        exited = np.zeros(config.n_particles, dtype=np.bool_)
        min_d = np.zeros(config.n_particles)
        steps = np.zeros(config.n_particles, dtype=np.int64)
        with np.errstate(over="ignore", invalid="ignore"):
            code = _run(kind, ext, dom.h, origin, box_b, nob, float(C), starts, keys,
                        float(config.T), base_dt, float(config.safety_band),
                        hist, exited, min_d, steps)
        if code == 0:
            break
        log.warning("non-finite particle state, halving base_dt to %g", base_dt / 2.0)
        base_dt /= 2.0
    else:
        raise StepSizeError(f"particle state overflowed after {MAX_HALVINGS} halvings of base_dt")
    runtime = time.perf_counter() - t0

    total = hist.sum()
    hist = hist / total if total > 0 else hist
    tv = total_variation(hist, density) if density is not None and total > 0 else float("nan")
    n_exit = int(exited.sum())
    return EnsembleReport(exit_count=n_exit, exit_fraction=n_exit / config.n_particles,
                          min_distance=float(min_d.min()), tv_distance=tv, runtime=runtime,
                          histogram=hist, n_particles=config.n_particles, T=float(config.T),
                          base_dt=base_dt, step_halvings=halvings,
                          total_steps=int(steps.sum()), boundary_constant=float(C),
                          certified=bool(C > 1.0), seed=config.seed)


def brownian_exit_probability(x0, T, length=1.0, tol=1e-14):
    """P(exit from (0, length) before T) for dX = sqrt(2) dB started at x0.

    Eigenfunction series of the survival probability,
    S = sum_n 2 (1 - (-1)^n) / (n pi) sin(n pi x0 / L) exp(-n^2 pi^2 T / L^2).
    """
    check_scalar(T, "T", low=0.0, closed_low=False)
    check_scalar(x0, "x0", low=0.0, high=length, closed_low=False, closed_high=False)
    n_max = int(np.ceil(length / np.pi * np.sqrt(-np.log(tol) / T))) + 2
    n = np.arange(1, n_max + 1, 2)  # even terms vanish
    terms = 4.0 / (n * np.pi) * np.sin(n * np.pi * x0 / length) \
        * np.exp(-(n * np.pi / length) ** 2 * T)
    return float(np.clip(1.0 - np.sum(terms), 0.0, 1.0))
