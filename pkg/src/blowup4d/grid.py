"""Uniform 4D grids, grid-aligned domains, stencils and quadrature."""

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateDomain, DomainSpecError, HoleSeparationError, NonfiniteIntegrand, SpecOutOfGrid

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2

SPHERE3_AREA = 2.0 * np.pi ** 2

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Grid4:
    """Isotropic uniform grid; node ``i`` sits at ``origin + h * i``."""

    n: tuple
    h: float
    origin: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        if len(n) != 4:
            raise ValueError("Grid4 needs 4 node counts, got %r" % (self.n,))
        if min(n) < 5:
            raise ValueError("every axis needs at least 5 nodes, got %r" % (n,))
        h = self.h
        if np.ndim(h):
            hs = np.asarray(h, dtype=float).ravel()
            if hs.size != 4 or np.ptp(hs) > 1e-12 * hs.max():
                raise ValueError("grid spacing must be equal on all axes, got %r" % (h,))
            h = float(hs[0])
        if not h > 0:
            raise ValueError("grid spacing must be positive")
        origin = tuple(float(v) for v in self.origin)
        if len(origin) != 4:
            raise ValueError("origin must have 4 coordinates")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "h", float(h))
        object.__setattr__(self, "origin", origin)

    @classmethod
    def covering(cls, lo, hi, h):
        """Smallest grid with spacing ``h`` whose nodes span ``[lo, hi]``."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        cells = (hi - lo) / h
        n = np.rint(cells).astype(int)
        if np.any(np.abs(cells - n) > 1e-6):
            raise DomainSpecError("extent %r is not a multiple of h=%g" % ((hi - lo).tolist(), h))
        return cls(tuple(n + 1), h, tuple(lo))

    @classmethod
    def for_box(cls, lo, hi, nodes):
        """Grid on ``[lo, hi]`` with ``nodes`` points along the shortest side."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        h = float(np.min(hi - lo)) / (nodes - 1)
        return cls.covering(lo, hi, h)

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return int(np.prod(self.n))

    def coords(self, axis):
        return self.origin[axis] + self.h * np.arange(self.n[axis])

    def open_axes(self):
        """Four coordinate arrays shaped for broadcasting to ``self.shape``."""
        out = []
        for a in range(4):
            shp = [1, 1, 1, 1]
            shp[a] = self.n[a]
            out.append(self.coords(a).reshape(shp))
        return out

    def node(self, idx):
        return np.asarray(self.origin) + self.h * np.asarray(idx, dtype=float)

    def fractional_index(self, points):
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) / self.h

    def dist2(self, point):
        """Squared distance from every node to ``point``."""
        ax = self.open_axes()
        return sum((ax[a] - float(point[a])) ** 2 for a in range(4))

    def upper(self):
        return np.asarray(self.origin) + self.h * (np.asarray(self.n) - 1)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 4 or len(hi) != 4 or any(a >= b for a, b in zip(lo, hi)):
            raise DomainSpecError("box corners must be 4-vectors with lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self):
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def boundary_distance(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.minimum(p - np.asarray(self.lo), np.asarray(self.hi) - p).min(axis=-1)
        return d if np.ndim(points) > 1 else float(d[0])

    def contains(self, points):
        return np.asarray(self.boundary_distance(points)) > 0


@dataclass(frozen=True)
class BoxWithHole:
    lo: tuple
    hi: tuple
    hole_lo: tuple
    hole_hi: tuple

    def __post_init__(self):
        outer = Box(self.lo, self.hi)
        hole = Box(self.hole_lo, self.hole_hi)
        if any(hl <= ol or hh >= oh for hl, hh, ol, oh in zip(hole.lo, hole.hi, outer.lo, outer.hi)):
            raise HoleSeparationError("hole must lie strictly inside the outer box")
        object.__setattr__(self, "lo", outer.lo)
        object.__setattr__(self, "hi", outer.hi)
        object.__setattr__(self, "hole_lo", hole.lo)
        object.__setattr__(self, "hole_hi", hole.hi)

    @property
    def center(self):
        """Volume barycentre of the holed box."""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        hlo, hhi = np.asarray(self.hole_lo), np.asarray(self.hole_hi)
        v_out, v_hole = np.prod(hi - lo), np.prod(hhi - hlo)
        return (v_out * 0.5 * (lo + hi) - v_hole * 0.5 * (hlo + hhi)) / (v_out - v_hole)

    def boundary_distance(self, points):
        """Signed-ish distance to the boundary: negative inside the hole."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d_out = np.minimum(p - np.asarray(self.lo), np.asarray(self.hi) - p).min(axis=-1)
        hlo, hhi = np.asarray(self.hole_lo), np.asarray(self.hole_hi)
        gap = np.maximum(np.maximum(hlo - p, p - hhi), 0.0)
        d_hole = np.sqrt((gap ** 2).sum(axis=-1))
        inside_hole = np.all((p >= hlo) & (p <= hhi), axis=-1)
        depth = np.minimum(p - hlo, hhi - p).min(axis=-1)
        d_hole = np.where(inside_hole, -depth, d_hole)
        d = np.minimum(d_out, d_hole)
        return d if np.ndim(points) > 1 else float(d[0])

    def contains(self, points):
        return np.asarray(self.boundary_distance(points)) > 0


@dataclass(eq=False)
class DomainMask:
    """Per-node classification of a grid into Interior / Boundary / Exterior."""

    grid: Grid4
    labels: np.ndarray
    spec: object
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def interior(self):
        return self.labels == INTERIOR

    @property
    def boundary(self):
        return self.labels == BOUNDARY

    @property
    def active(self):
        return self.labels != EXTERIOR

    @property
    def n_interior(self):
        return int(np.count_nonzero(self.labels == INTERIOR))

    @property
    def h(self):
        return self.grid.h

    def interior_bbox(self):
        """Slices of the smallest index box containing all Interior nodes."""
        if "bbox" not in self._cache:
            inner = self.interior
            bbox = []
            for a in range(4):
                hit = np.flatnonzero(inner.any(axis=tuple(b for b in range(4) if b != a)))
                bbox.append(slice(int(hit[0]), int(hit[-1]) + 1))
            self._cache["bbox"] = tuple(bbox)
        return self._cache["bbox"]

    def is_full_box(self):
        """True when the Interior set fills its bounding box (plain Box domains)."""
        if "full_box" not in self._cache:
            bb = self.interior_bbox()
            self._cache["full_box"] = bool(self.interior[bb].all())
        return self._cache["full_box"]

    def depth(self, limit=3):
        """Axis-step distance from each Interior node to the Boundary set.

        Nodes deeper than ``limit`` get ``limit + 1``; non-Interior nodes get 0.
        """
        key = ("depth", limit)
        if key not in self._cache:
            depth = np.zeros(self.grid.shape, dtype=np.int16)
            current = self.interior.copy()
            structure = ndimage.generate_binary_structure(4, 1)
            for level in range(1, limit + 2):
                depth[current] = level
                if level == limit + 1:
                    break
                current = ndimage.binary_erosion(current, structure=structure, border_value=0)
            self._cache[key] = depth
        return self._cache[key]

    def field(self, values):
        return ScalarField4(self.grid, values)


@dataclass(frozen=True, eq=False)
class ScalarField4:
    grid: Grid4
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError("field shape %r does not match grid %r" % (v.shape, self.grid.shape))
        object.__setattr__(self, "values", v)

    def __add__(self, other):
        return ScalarField4(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField4(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return ScalarField4(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField4(self.grid, -self.values)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))


def _vals(x):
    return x.values if isinstance(x, ScalarField4) else x


def _aligned(values, origin, h, what):
    idx = (np.asarray(values) - origin) / h
    r = np.rint(idx)
    if np.any(np.abs(idx - r) > 1e-6):
        raise DomainSpecError("%s %r is not aligned with grid nodes" % (what, list(values)))
    return r.astype(int)


def build_domain(spec, grid):
    """Classify the nodes of ``grid`` against a Box or BoxWithHole."""
    origin = np.asarray(grid.origin)
    h = grid.h
    upper = grid.upper()
    lo, hi = np.asarray(spec.lo), np.asarray(spec.hi)
    if np.any(lo < origin - _ALIGN_TOL * h) or np.any(hi > upper + _ALIGN_TOL * h):
        raise SpecOutOfGrid("domain %r exceeds grid extents %r..%r" % (spec, origin.tolist(), upper.tolist()))
    ilo = _aligned(lo, origin, h, "box corner")
    ihi = _aligned(hi, origin, h, "box corner")

    def axis_masks(a_lo, a_hi):
        closed, open_ = [], []
        for a in range(4):
            i = np.arange(grid.n[a])
            shp = [1, 1, 1, 1]
            shp[a] = grid.n[a]
            closed.append(((i >= a_lo[a]) & (i <= a_hi[a])).reshape(shp))
            open_.append(((i > a_lo[a]) & (i < a_hi[a])).reshape(shp))
        c = closed[0] & closed[1] & closed[2] & closed[3]
        o = open_[0] & open_[1] & open_[2] & open_[3]
        return c, o

    closed_out, open_out = axis_masks(ilo, ihi)
    labels = np.full(grid.shape, EXTERIOR, dtype=np.int8)
    if isinstance(spec, BoxWithHole):
        hlo = _aligned(spec.hole_lo, origin, h, "hole corner")
        hhi = _aligned(spec.hole_hi, origin, h, "hole corner")
        if np.any(hlo - ilo < 3) or np.any(ihi - hhi < 3):
            raise HoleSeparationError("hole faces must be at least 3h from the outer faces")
        closed_hole, open_hole = axis_masks(hlo, hhi)
        labels[closed_out] = BOUNDARY
        labels[open_out & ~closed_hole] = INTERIOR
        labels[open_hole] = EXTERIOR
    elif isinstance(spec, Box):
        labels[closed_out] = BOUNDARY
        labels[open_out] = INTERIOR
    else:
        raise DomainSpecError("unknown domain spec %r" % (spec,))
    if not np.any(labels == INTERIOR):
        raise DegenerateDomain("domain has no interior nodes")
    return DomainMask(grid, labels, spec)


def lap_core(arr, h):
    """9-point Laplacian on nodes ``[1:-1]^4``; returned array has the input's shape, zero on the edge."""
    out = np.zeros_like(arr)
    c = (slice(1, -1),) * 4
    acc = -8.0 * arr[c]
    for a in range(4):
        plus = list(c)
        minus = list(c)
        plus[a] = slice(2, None)
        minus[a] = slice(None, -2)
        acc += arr[tuple(plus)]
        acc += arr[tuple(minus)]
    out[c] = acc / (h * h)
    return out


def laplacian(f, mask):
    """Discrete Laplacian at Interior nodes, zero elsewhere."""
    vals = np.where(mask.active, f.values, 0.0)
    out = lap_core(vals, mask.h)
    out[~mask.interior] = 0.0
    return ScalarField4(f.grid, out)


def node_weights(mask):
    """Quadrature weights: h^4 on Interior nodes, h^4/2 on Boundary nodes."""
    if "weights" not in mask._cache:
        w = np.where(mask.interior, 1.0, np.where(mask.boundary, 0.5, 0.0)) * mask.h ** 4
        mask._cache["weights"] = w
    return mask._cache["weights"]


def integrate(f, mask):
    vals = f.values if isinstance(f, ScalarField4) else np.asarray(f)
    w = node_weights(mask)
    return float(np.sum(np.where(w > 0, vals, 0.0) * w))


RadialIntegral = namedtuple("RadialIntegral", "value tail")


def radial_integrate(g, r_max, n=2 ** 16):
    """``|S^3| * int_0^r_max r^3 g(r) dr`` by composite Simpson with ``n`` panels.

    The tail beyond ``r_max`` is estimated from the local power-law decay of
    ``g`` at ``r_max``; it is reported, not added.
    """
    if n <= 0 or n % 2:
        raise ValueError("n must be a positive even integer")
    r = np.linspace(0.0, r_max, n + 1)
    gv = np.asarray(g(r[1:]), dtype=float)
    if gv.shape != r[1:].shape:
        gv = np.broadcast_to(gv, r[1:].shape)
    if not np.all(np.isfinite(gv)):
        raise NonfiniteIntegrand("integrand is not finite on (0, %g]" % r_max)
    f = np.empty_like(r)
    f[0] = 0.0
    f[1:] = r[1:] ** 3 * gv
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    value = SPHERE3_AREA * (r_max / n) / 3.0 * float(np.dot(w, f))

    g_end = abs(float(gv[-1]))
    g_half = abs(float(np.asarray(g(np.array([0.5 * r_max])), dtype=float).ravel()[0]))
    if g_end == 0.0:
        tail = 0.0
    elif g_half > 0.0:
        p = np.log(g_half / g_end) / np.log(2.0)
        tail = SPHERE3_AREA * r_max ** 4 * g_end / (p - 4.0) if p > 4.0 else float("inf")
    else:
        tail = float("inf")
    return RadialIntegral(value, tail)


def smooth_extension(values, active):
    """Copy of ``values`` with inactive nodes filled by a C^1 extension of the active data.

    Each inactive node takes the odd reflection ``2 v(p + d e) - v(p + 2d e)``
    across the nearest active node along a coordinate direction; nodes with no
    active neighbour on any axis line keep the nearest active value.
    """
    out = np.array(values, dtype=float, copy=True)
    holes = np.argwhere(~active)
    if len(holes) == 0:
        return out
    _, nearest = ndimage.distance_transform_edt(~active, return_indices=True)
    out[~active] = values[tuple(nearest[:, ~active])]
    n = active.shape
    for p in holes:
        best = None
        for a in range(4):
            for step in (-1, 1):
                q = p.copy()
                d = 0
                while 0 <= q[a] < n[a] and not active[tuple(q)]:
                    q[a] += step
                    d += 1
                if not 0 <= q[a] < n[a]:
                    continue
                if best is None or d < best[0]:
                    best = (d, a, step)
        if best is None:
            continue
        d, a, step = best
        q1 = p.copy()
        q1[a] += d * step
        q2 = p.copy()
        q2[a] += 2 * d * step
        if 0 <= q2[a] < n[a] and active[tuple(q2)]:
            out[tuple(p)] = 2.0 * values[tuple(q1)] - values[tuple(q2)]
        else:
            out[tuple(p)] = values[tuple(q1)]
    return out


def spline_coefficients(f, active=None):
    """Cubic B-spline coefficients of a field (inactive nodes smoothly extended first)."""
    vals = f.values if isinstance(f, ScalarField4) else np.asarray(f, dtype=float)
    if active is not None and not np.all(active):
        vals = smooth_extension(vals, active)
    return ndimage.spline_filter(vals, order=3, mode="mirror")


def interpolate(f, points, order=3, active=None, coeffs=None):
    """Interpolate a field at arbitrary points ``(..., 4)``.

    ``order=3`` is a C^2 cubic spline (pass precomputed ``coeffs`` from
    spline_coefficients to skip the prefilter); ``order=1`` is quadrilinear.
    """
    grid = f.grid
    p = np.asarray(points, dtype=float)
    flat = grid.fractional_index(p.reshape(-1, 4)).T
    if order == 3:
        if coeffs is None:
            coeffs = spline_coefficients(f, active)
        out = ndimage.map_coordinates(coeffs, flat, order=3, mode="mirror", prefilter=False)
    elif order == 1:
        vals = f.values if isinstance(f, ScalarField4) else np.asarray(f)
        out = ndimage.map_coordinates(vals, flat, order=1, mode="nearest")
    else:
        raise ValueError("order must be 1 or 3")
    return out.reshape(p.shape[:-1]) if p.ndim > 1 else float(out[0])
