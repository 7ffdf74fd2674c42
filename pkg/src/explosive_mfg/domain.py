"""Discretized domains carrying the boundary distance machinery.

Three desk-scale geometries are supported: the interval (0, L), the
rectangle (0, Lx) x (0, Ly) and the disk of radius R centred at the
origin.  Grids are cell-centred: nodes sit at (i + 1/2) h, so the outermost
node layer of the interval and rectangle lies at distance h/2 from the
boundary.

The distance ``d`` is exact near the boundary and blended to a constant cap
deeper inside (quintic smoothstep), which makes it C^2 everywhere the
geometry allows it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import check_int, check_scalar
from .exceptions import ConfigurationError

KINDS = ("interval", "rectangle", "disk")


def smoothstep5(t):
    """Quintic smoothstep 6t^5 - 15t^4 + 10t^3 and its first two derivatives."""
    t = np.clip(t, 0.0, 1.0)
    s = t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    ds = 30.0 * t * t * (1.0 - t) ** 2
    d2s = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, d2s


@dataclass(frozen=True)
class DomainSpec:
    """Geometry and resolution of a desk-scale domain.

    Parameters
    ----------
    kind : {"interval", "rectangle", "disk"}
    extents : tuple of float
        ``(L,)`` for the interval, ``(Lx, Ly)`` for the rectangle and
        ``(R,)`` for the disk.
    resolution : int
        Nodes per axis (along x for the rectangle, along the diameter for
        the disk).
    epsilon0 : float
        Width of the boundary strip where ``d`` is the exact distance.
    smoothing_width : float
        Width of the blend from the exact distance to the cap.
    """

    kind: str = "interval"
    extents: tuple = (1.0,)
    resolution: int = 128
    epsilon0: float = 0.2
    smoothing_width: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        ext = tuple(float(e) for e in np.atleast_1d(self.extents))
        need = 2 if self.kind == "rectangle" else 1
        if len(ext) != need:
            raise ConfigurationError(f"{self.kind} needs {need} extent(s), got {ext}")
        for e in ext:
            check_scalar(e, "extent", low=0.0, closed_low=False)
        object.__setattr__(self, "extents", ext)
        check_int(self.resolution, "resolution", low=8)
        check_scalar(self.epsilon0, "epsilon0", 0.0, 1.0, closed_low=False, closed_high=False)
        check_scalar(self.smoothing_width, "smoothing_width", low=0.0, closed_low=False)
        if self.epsilon0 + self.smoothing_width > 1.0:
            raise ConfigurationError("epsilon0 + smoothing_width must not exceed 1 (d <= 1)")
        if self.inradius <= self.epsilon0 + self.smoothing_width:
            raise ConfigurationError(
                f"inradius {self.inradius:g} must exceed epsilon0 + smoothing_width "
                f"= {self.epsilon0 + self.smoothing_width:g} so the cap hides the medial axis"
            )
        if not self.h < self.epsilon0 / 4.0:
            raise ConfigurationError(
                f"resolution too coarse: h={self.h:g} must be below epsilon0/4={self.epsilon0 / 4:g}"
            )
        if self.kind == "rectangle":
            ny = self.extents[1] / self.h
            if abs(ny - round(ny)) > 1e-9 * max(1.0, ny):
                raise ConfigurationError("rectangle extents must both be multiples of h")

    @property
    def dim(self):
        return 2 if self.kind in ("rectangle", "disk") else 1

    @property
    def h(self):
        if self.kind == "disk":
            return 2.0 * self.extents[0] / self.resolution
        return self.extents[0] / self.resolution

    @property
    def inradius(self):
        if self.kind == "interval":
            return self.extents[0] / 2.0
        if self.kind == "rectangle":
            return min(self.extents) / 2.0
        return self.extents[0]

    def with_resolution(self, resolution):
        return DomainSpec(self.kind, self.extents, int(resolution), self.epsilon0,
                          self.smoothing_width)


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class Domain:
    """A discretized domain.

    Build with :func:`build_domain`.  All arrays are read-only.

    Attributes
    ----------
    spec : DomainSpec
    h : float
        Grid spacing.
    nodes : ndarray of shape (n, dim)
    d : ndarray of shape (n,)
        Extended (capped, C^2) distance field.
    d_exact : ndarray of shape (n,)
        Exact distance to the boundary.
    grad_d, laplacian_d : ndarray
        Gradient and Laplacian of the extended distance.
    normal : ndarray of shape (n, dim)
        Outward unit normal at the nearest boundary point.
    neighbors : ndarray of shape (n, dim, 2)
        Index of the lower/upper axis neighbour, -1 if outside.
    boundary : ndarray of bool
        Outermost node layer (some axis neighbour is missing).
    M0 : float
        Lower bound of ``d`` on the interior subdomain.
    """

    def __init__(self, spec, box_shape, box_coords, inside):
        self.spec = spec
        self.h = spec.h
        self.dim = spec.dim
        self.box_shape = tuple(box_shape)
        self.inside = _readonly(inside)
        flat_inside = inside.ravel()
        coords = np.stack([c.ravel() for c in box_coords], axis=1)
        self.nodes = _readonly(coords[flat_inside])
        box_index = np.stack(
            [ix.ravel() for ix in np.indices(self.box_shape)], axis=1)[flat_inside]
        self.box_index = _readonly(box_index)
        node_of_box = np.full(flat_inside.size, -1, dtype=np.int64)
        node_of_box[flat_inside] = np.arange(flat_inside.sum())
        node_of_box = node_of_box.reshape(self.box_shape)
        self.node_of_box = _readonly(node_of_box)

        n = len(self.nodes)
        nb = np.full((n, self.dim, 2), -1, dtype=np.int64)
        for k in range(self.dim):
            for side, step in enumerate((-1, 1)):
                idx = box_index.copy()
                idx[:, k] += step
                ok = (idx[:, k] >= 0) & (idx[:, k] < self.box_shape[k])
                nb[ok, k, side] = node_of_box[tuple(idx[ok].T)]
        self.neighbors = _readonly(nb)
        self.boundary = _readonly(np.any(nb < 0, axis=(1, 2)))

        d_exact, normal = self.exact_distance(self.nodes)
        d, grad, lap = self.distance_field(self.nodes)
        self.d_exact = _readonly(d_exact)
        self.normal = _readonly(normal)
        self.d = _readonly(d)
        self.grad_d = _readonly(grad)
        self.laplacian_d = _readonly(lap)
        self.M0 = spec.epsilon0

    # geometry -----------------------------------------------------------
    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def cell_volume(self):
        return self.h ** self.dim

    @cached_property
    def interior(self):
        """Indices of nodes with all axis neighbours present."""
        return _readonly(np.flatnonzero(~self.boundary))

    def _raw_sides(self, pts):
        """Side distances and their (constant) gradients for the rectangle."""
        lx, ly = self.spec.extents
        x, y = pts[:, 0], pts[:, 1]
        sides = np.stack([x, lx - x, y, ly - y], axis=1)
        grads = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        return sides, grads

    def exact_distance(self, points):
        """Exact distance to the boundary and outward normal at the nearest point.

        Points outside the domain get a negative distance.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
            pts = pts.T
        kind = self.spec.kind
        if kind == "interval":
            L = self.spec.extents[0]
            x = pts[:, 0]
            d = np.minimum(x, L - x)
            nu = np.where(x < L / 2.0, -1.0, 1.0)[:, None]
        elif kind == "rectangle":
            sides, grads = self._raw_sides(pts)
            j = np.argmin(sides, axis=1)
            d = sides[np.arange(len(pts)), j]
            nu = -grads[j]
        else:
            R = self.spec.extents[0]
            r = np.linalg.norm(pts, axis=1)
            d = R - r
            safe = np.where(r > 0, r, 1.0)
            nu = np.where(r[:, None] > 0, pts / safe[:, None], np.array([1.0, 0.0]))
        return d, nu

    def _raw_field(self, pts):
        """Raw distance with gradient and Laplacian (smoothed at rectangle bisectors)."""
        kind = self.spec.kind
        if kind == "interval":
            L = self.spec.extents[0]
            x = pts[:, 0]
            d = np.minimum(x, L - x)
            g = np.where(x < L / 2.0, 1.0, -1.0)[:, None]
            lap = np.zeros(len(pts))
        elif kind == "rectangle":
            sides, grads = self._raw_sides(pts)
            order = np.argsort(sides, axis=1)
            rows = np.arange(len(pts))
            a = sides[rows, order[:, 0]]
            b = sides[rows, order[:, 1]]
            ga, gb = grads[order[:, 0]], grads[order[:, 1]]
            k = self.spec.h
            s = np.maximum(1.0 - (b - a) / k, 0.0)
            d = a - k * s ** 3 / 6.0
            wa, wb = 1.0 - s * s / 2.0, s * s / 2.0
            g = wa[:, None] * ga + wb[:, None] * gb
            cross = np.sum(ga * gb, axis=1)
            lap = -2.0 * s / k + 2.0 * (s / k) * cross
        else:
            R = self.spec.extents[0]
            r = np.linalg.norm(pts, axis=1)
            d = R - r
            safe = np.where(r > 0, r, 1.0)
            g = np.where(r[:, None] > 0, -pts / safe[:, None], 0.0)
            lap = np.where(r > 0, -(self.dim - 1) / safe, 0.0)
        return d, g, lap

    def distance_field(self, points):
        """Extended distance ``d`` with its gradient and Laplacian at ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1 and pts.shape[1] != 1:
            pts = pts.reshape(-1, 1)
        s, g, lap = self._raw_field(pts)
        e0, w = self.spec.epsilon0, self.spec.smoothing_width
        cap = e0 + w
        t = (s - e0) / w
        S, dS, d2S = smoothstep5(t)
        tt = np.clip(t, 0.0, 1.0)
        d = s + S * (cap - s)
        inside = (t > 0) & (t < 1)
        phi1 = np.where(t >= 1, 0.0, 1.0 - S + np.where(inside, dS * (1.0 - tt), 0.0))
        phi2 = np.where(inside, (d2S * (1.0 - tt) - 2.0 * dS) / w, 0.0)
        d = np.where(t >= 1, cap, d)
        gn2 = np.sum(g * g, axis=1)
        grad = phi1[:, None] * g
        lapd = phi2 * gn2 + phi1 * lap
        return d, grad, lapd

    def subdomain_mask(self, delta):
        """Boolean mask of nodes in Omega_delta = {d > delta}."""
        return self.d_exact > float(delta)

    def box_values(self, values, fill=np.nan):
        """Scatter node values onto the bounding box grid."""
        out = np.full(self.box_shape, fill, dtype=float)
        out[tuple(self.box_index.T)] = values
        return out

    @cached_property
    def box_origin(self):
        """Coordinates of box node (0, ..., 0)."""
        if self.spec.kind == "disk":
            return np.full(self.dim, -self.spec.extents[0] + self.h / 2.0)
        return np.full(self.dim, self.h / 2.0)

    def nearest_node(self, point):
        """Index of the node closest to ``point``."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        return int(np.argmin(np.sum((self.nodes - point) ** 2, axis=1)))

    @cached_property
    def center(self):
        if self.spec.kind == "interval":
            return np.array([self.spec.extents[0] / 2.0])
        if self.spec.kind == "rectangle":
            return np.asarray(self.spec.extents) / 2.0
        return np.zeros(2)

    def band_index(self):
        """Integer layer index floor(d_exact / h) per node."""
        return np.floor(self.d_exact / self.h + 1e-9).astype(int)

    def dump_csv(self, path, values, name="value"):
        """Write node index, coordinates and values as CSV."""
        write_field_csv(path, self, values, name=name)

    def __repr__(self):
        return (f"Domain(kind={self.spec.kind!r}, extents={self.spec.extents}, "
                f"h={self.h:g}, n_nodes={self.n_nodes})")


def build_domain(spec):
    """Discretize ``spec`` into a :class:`Domain`.

    Parameters
    ----------
    spec : DomainSpec or dict

    Returns
    -------
    Domain
    """
    if isinstance(spec, dict):
        spec = DomainSpec(**spec)
    h = spec.h
    n = spec.resolution
    if spec.kind == "interval":
        x = (np.arange(n) + 0.5) * h
        return Domain(spec, (n,), (x,), np.ones(n, dtype=bool))
    if spec.kind == "rectangle":
        ny = int(round(spec.extents[1] / h))
        X, Y = np.meshgrid((np.arange(n) + 0.5) * h, (np.arange(ny) + 0.5) * h, indexing="ij")
        return Domain(spec, (n, ny), (X, Y), np.ones((n, ny), dtype=bool))
    R = spec.extents[0]
    c = -R + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="ij")
    inside = X ** 2 + Y ** 2 < R ** 2
    return Domain(spec, (n, n), (X, Y), inside)


@dataclass(frozen=True, eq=False)
class GridField:
    """Node values on a domain with an optional support mask.

    Values outside the mask are ignored by consumers; inside they must be
    finite.
    """

    values: np.ndarray
    domain: Domain
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != self.domain.n_nodes:
            raise ConfigurationError(
                f"field has {vals.shape[0]} values for {self.domain.n_nodes} nodes")
        mask = self.mask
        if mask is None:
            mask = np.ones(self.domain.n_nodes, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if not np.all(np.isfinite(vals[mask])):
            raise ConfigurationError("field has non-finite values on its support")
        object.__setattr__(self, "values", _readonly(vals))
        object.__setattr__(self, "mask", _readonly(mask))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def to_csv(self, path, name="value"):
        write_field_csv(path, self.domain, np.where(self.mask, self.values, np.nan)
                        if self.values.ndim == 1 else self.values, name=name)


def write_field_csv(path, domain, values, name="value"):
    values = np.asarray(values, dtype=float)
    names = [name] if values.ndim == 1 else [f"{name}_{k}" for k in range(values.shape[1])]
    coord_names = ["x", "y"][: domain.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(["node", *coord_names, *names])
        vals2 = values.reshape(len(values), -1)
        for i in range(domain.n_nodes):
            w.writerow([i, *(repr(float(c)) for c in domain.nodes[i]),
                        *(repr(float(v)) for v in vals2[i])])


def read_field_csv(path):
    """Read a CSV written by :func:`write_field_csv`; returns (header, array)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return header, data


# Hoelder seminorm and extension ------------------------------------------

def holder_seminorm(values, points, alpha, radius=None, chunk=2048):
    """Discrete Hoelder-alpha seminorm max |f_i - f_j| / |x_i - x_j|^alpha.

    Pairs are restricted to ``|x_i - x_j| <= radius`` when given.  The sweep
    is exhaustive over pairs, chunked to bound memory.
    """
    f = np.asarray(values, dtype=float)
    x = np.asarray(points, dtype=float).reshape(len(f), -1)
    best = 0.0
    for s in range(0, len(f), chunk):
        xs = x[s:s + chunk]
        dist = np.sqrt(np.sum((xs[:, None, :] - x[None, :, :]) ** 2, axis=2))
        diff = np.abs(f[s:s + chunk, None] - f[None, :])
        ok = dist > 0
        if radius is not None:
            ok &= dist <= radius
        if np.any(ok):
            best = max(best, float(np.max(diff[ok] / dist[ok] ** alpha)))
    return best


def holder_norm(values, points, alpha, radius=None):
    """sup-norm plus Hoelder-alpha seminorm."""
    f = np.asarray(values, dtype=float)
    return float(np.max(np.abs(f))) + holder_seminorm(f, points, alpha, radius=radius)


def extend_holder(mu, alpha=0.5, chunk=2048):
    """Extend a field from its support mask to the whole domain.

    The extension is the inf-convolution
    ``min_y (mu(y) + L |x - y|^alpha)`` over support nodes ``y``, with ``L``
    the discrete Hoelder-alpha seminorm of ``mu`` on its support.  It agrees
    with ``mu`` on the support and has the same seminorm on the domain.

    Parameters
    ----------
    mu : GridField
    alpha : float in (0, 1]

    Returns
    -------
    GridField with a full mask.
    """
    alpha = check_scalar(alpha, "alpha", 0.0, 1.0, closed_low=False)
    dom = mu.domain
    mask = np.asarray(mu.mask, dtype=bool)
    if not mask.any():
        raise ConfigurationError("extend_holder: empty support mask")
    out = np.array(mu.values, dtype=float)
    if mask.all():
        return GridField(out, dom)
    ys = dom.nodes[mask]
    fy = out[mask]
    L = holder_seminorm(fy, ys, alpha)
    outside = np.flatnonzero(~mask)
    for s in range(0, len(outside), chunk):
        idx = outside[s:s + chunk]
        dist = np.sqrt(np.sum((dom.nodes[idx][:, None, :] - ys[None, :, :]) ** 2, axis=2))
        out[idx] = np.min(fy[None, :] + L * dist ** alpha, axis=1)
    return GridField(out, dom)
