"""Navier bilaplacian solves, the Green's function and its regular part.

The fundamental solution is normalised as ``Lap^2 (-8 log|x|) = 64 pi^2 delta``,
so ``G(x, xi) = -8 log|x - xi| + H(x, xi)`` where the regular part ``H`` is the
biharmonic function with ``H = 8 log|x - xi|`` and ``Lap H = 16 / |x - xi|^2``
on the boundary.  ``H`` is smooth, so it is the only part stored on the grid;
the log singularity is always evaluated analytically.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentPoints, NoConvergence, SourceTooCloseToBoundary
from .grid import ScalarField4, interpolate, laplacian, spline_coefficients
from .poisson import LinearSolveParams, solve_dirichlet
from .profiles import bubble_laplacian, bubble_value


def solve_navier(f, g0, g1, mask, params=None, return_intermediate=False):
    """Solve ``Lap_h^2 u = f`` with ``u = g0`` and ``Lap u = g1`` on the Boundary.

    Two Dirichlet solves: ``Lap w = f, w = g1`` then ``Lap u = w, u = g0``.
    ``None`` stands for a zero argument.  With ``return_intermediate`` the pair
    ``(u, w)`` is returned.
    """
    params = params or LinearSolveParams()
    zero = np.zeros(mask.grid.shape)
    f = zero if f is None else f
    try:
        w = solve_dirichlet(f, g1, mask, params)
    except NoConvergence as exc:
        raise NoConvergence(exc.iterations, exc.residual, stage="navier:inner") from exc
    try:
        u = solve_dirichlet(w, g0, mask, params)
    except NoConvergence as exc:
        raise NoConvergence(exc.iterations, exc.residual, stage="navier:outer") from exc
    return (u, w) if return_intermediate else u


def navier_residual(u, w_boundary, f, mask):
    """``Lap_h(Lap_h u) - f`` at Interior nodes, using ``w_boundary`` as Lap u on the Boundary."""
    w = laplacian(u, mask).values
    wb = w_boundary.values if isinstance(w_boundary, ScalarField4) else w_boundary
    w = np.where(mask.boundary, 0.0 if wb is None else wb, w)
    out = laplacian(ScalarField4(mask.grid, w), mask).values
    if f is not None:
        out = out - np.where(mask.interior, f.values if isinstance(f, ScalarField4) else f, 0.0)
    return np.where(mask.interior, out, 0.0)


@dataclass(frozen=True, eq=False)
class GreensEvaluation:
    source: np.ndarray
    H_field: ScalarField4
    H_diag: float
    mask: object
    lap_H: ScalarField4 = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.mask.grid

    def H_at(self, x):
        """Spline interpolant of ``H(., xi)``; coefficients are computed once."""
        coeffs = self._cache.get("spline")
        if coeffs is None:
            coeffs = spline_coefficients(self.H_field, self.mask.active)
            self._cache["spline"] = coeffs
        return interpolate(self.H_field, x, coeffs=coeffs)

    def G_field(self):
        """Reconstructed ``G(x, xi)`` at every node (``-inf`` where x hits xi exactly)."""
        r2 = self.grid.dist2(self.source)
        with np.errstate(divide="ignore"):
            g = -4.0 * np.log(r2) + self.H_field.values
        return np.where(self.mask.active, g, 0.0)


def _boundary_r2(xi, mask):
    r2 = mask.grid.dist2(xi)
    return np.where(mask.boundary, r2, 1.0)


def check_source(xi, mask, min_dist=None):
    xi = np.asarray(xi, dtype=float)
    min_dist = 2.0 * mask.h if min_dist is None else min_dist
    d = mask.spec.boundary_distance(xi)
    if not d >= min_dist - 1e-12:
        raise SourceTooCloseToBoundary(
            "source %s at distance %.4g from the boundary (needs >= %.4g)" % (xi.tolist(), d, min_dist))
    return xi


def regular_part(xi, mask, params=None):
    """Regular part ``H(., xi)`` of the Navier Green's function as a grid field."""
    xi = check_source(xi, mask)
    r2 = _boundary_r2(xi, mask)
    g0 = 4.0 * np.log(r2)
    g1 = 16.0 / r2
    H, w = solve_navier(None, g0, g1, mask, params, return_intermediate=True)
    ev = GreensEvaluation(xi, H, 0.0, mask, w)
    object.__setattr__(ev, "H_diag", float(ev.H_at(xi)))
    return ev


def greens_value(ev, x):
    """``G(x, xi) = -8 log|x - xi| + H(x, xi)``; ``x`` may be one point or an ``(..., 4)`` array."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum((x - ev.source) ** 2, axis=-1))
    if np.any(r < 0.25 * ev.mask.h):
        raise CoincidentPoints("evaluation point within h/4 of the source %s" % ev.source.tolist())
    out = -8.0 * np.log(r) + ev.H_at(x)
    return float(out) if x.ndim == 1 else out


def regular_gradient(ev, x, step=None):
    """Central-difference gradient of the interpolated ``H(., xi)`` at ``x``."""
    x = np.asarray(x, dtype=float)
    step = ev.mask.h if step is None else step
    offs = step * np.eye(4)
    pts = np.concatenate([x[None, :] + offs, x[None, :] - offs])
    vals = ev.H_at(pts)
    return (vals[:4] - vals[4:]) / (2.0 * step)


def greens_gradient(ev, x, step=None):
    """``grad_x G(x, xi)``: analytic log part plus differenced regular part."""
    x = np.asarray(x, dtype=float)
    d = x - ev.source
    r2 = float(d @ d)
    if r2 < (0.25 * ev.mask.h) ** 2:
        raise CoincidentPoints("gradient requested at the source")
    return -8.0 * d / r2 + regular_gradient(ev, x, step)


def boundary_correction(xi_j, mu_j, eps, k_at_xi, mask, params=None, return_intermediate=False):
    """Biharmonic ``H_j`` with ``H_j = -u_j`` and ``Lap H_j = -Lap u_j`` on the boundary."""
    if not mu_j > 0:
        raise ValueError("mu_j must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    xi_j = check_source(xi_j, mask)
    r2 = _boundary_r2(xi_j, mask)
    g0 = -bubble_value(r2, mu_j, eps, k_at_xi)
    g1 = -bubble_laplacian(r2, mu_j, eps)
    return solve_navier(None, g0, g1, mask, params, return_intermediate=return_intermediate)


def expansion_discrepancy(H_j, ev, mu_j, eps, k_at_xi):
    """Sup over active nodes of ``|H_j - [H(., xi) - 4 log mu (1 + eps^2) + log k]|``."""
    shift = -4.0 * np.log(mu_j * (1.0 + eps ** 2)) + np.log(k_at_xi)
    diff = H_j.values - (ev.H_field.values + shift)
    return float(np.max(np.abs(diff[ev.mask.active])))


def green_min_interior(ev, exclude_radius=None):
    """Minimum of the reconstructed G over Interior nodes away from the source."""
    mask = ev.mask
    exclude_radius = mask.h if exclude_radius is None else exclude_radius
    r2 = mask.grid.dist2(ev.source)
    sel = mask.interior & (r2 >= exclude_radius ** 2)
    return float(ev.G_field()[sel].min())


def gradient_band(ev, n_samples=400, seed=0):
    """Fit of ``|grad_x H(x, xi)| <= C1 * min(1/|x - xi|, 1/d(xi)) + C2`` on random Interior nodes.

    Returns a dict with the envelope constant ``C1`` (with ``C2 = 0``), a
    least-squares ``(C1, C2)`` pair and the sampled maximum gradient.
    """
    mask = ev.mask
    rng = np.random.default_rng(seed)
    depth = mask.depth(limit=1)
    idx = np.argwhere(depth > 1)
    pick = idx[rng.choice(len(idx), size=min(n_samples, len(idx)), replace=False)]
    pts = mask.grid.node(pick)
    d_src = mask.spec.boundary_distance(ev.source)
    r = np.linalg.norm(pts - ev.source, axis=1)
    keep = r > 2 * mask.h
    pts, r = pts[keep], r[keep]
    grads = np.array([np.linalg.norm(regular_gradient(ev, p)) for p in pts])
    feat = np.minimum(1.0 / r, 1.0 / d_src)
    envelope = float(np.max(grads / feat))
    A = np.column_stack([feat, np.ones_like(feat)])
    (c1, c2), *_ = np.linalg.lstsq(A, grads, rcond=None)
    return {"C1_envelope": envelope, "C1_fit": float(c1), "C2_fit": float(c2),
            "max_grad": float(grads.max()), "samples": int(len(pts))}
