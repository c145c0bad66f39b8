"""Multi-bubble approximate solution, its residual, linearisation and energy.

Coupling and bubble (with ``a = (mu eps)^2``):

    rho^4 = 384 eps^4 / (1 + eps^2)^4
    u_j(x) = 4 log(mu_j (1 + eps^2)) - 4 log(a_j + |x - xi_j|^2) - log k(xi_j)
    U = sum_j (u_j + H_j),   H_j biharmonic, H_j = -u_j and Lap H_j = -Lap u_j on the boundary

Expanded variables are ``y = x / eps``, ``V(y) = U(eps y) + 4 log(rho eps)``,
so ``Lap_y^2 = eps^4 Lap_x^2`` and ``k e^V = rho^4 eps^4 k e^U``.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import roots_chebyu

from .biharmonic import boundary_correction, expansion_discrepancy, greens_value, navier_residual
from .errors import BadIndex, CoreUnderResolved, EpsOutOfRange, NotAdmissible, OverflowGuard
from .grid import SPHERE3_AREA, ScalarField4, integrate, interpolate, laplacian, radial_integrate, spline_coefficients
from .profiles import bubble_bilaplacian, bubble_laplacian, bubble_value, rho4_of_eps
from .reduced_energy import _evaluations, check_admissible, mu_from_xi
from .weights import as_weight

log = logging.getLogger(__name__)

EXP_GUARD = 500.0


@dataclass(frozen=True)
class EpsRho:
    eps: float
    rho: float

    @property
    def rho4(self):
        return self.rho ** 4


def make_eps_rho(eps):
    """``rho`` from ``rho^4 = 384 eps^4 / (1 + eps^2)^4``; eps = 1 is accepted (the maximum of rho)."""
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise EpsOutOfRange("eps must lie in (0, 1], got %r" % eps)
    return EpsRho(eps, rho4_of_eps(eps) ** 0.25)


def bubble(x, xi_j, mu_j, eps, k_at_xi=1.0):
    """``u_j`` at one point or an ``(..., 4)`` array of points."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum((x - np.asarray(xi_j, dtype=float)) ** 2, axis=-1)
    out = bubble_value(r2, mu_j, eps, k_at_xi)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(eq=False)
class AnsatzBundle:
    cfg: object
    er: EpsRho
    U: ScalarField4
    H_fields: list
    lapH_fields: list
    k: object
    mask: object
    greens: list
    k_at_xi: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def eps(self):
        return self.er.eps

    @property
    def mu(self):
        return self.cfg.mu

    @property
    def xi(self):
        return self.cfg.xi

    @property
    def xi_scaled(self):
        return self.cfg.xi / self.er.eps

    def r2(self, j):
        return self.mask.grid.dist2(self.cfg.xi[j])

    def u_at(self, j, x):
        return bubble(x, self.cfg.xi[j], self.cfg.mu[j], self.eps, self.k_at_xi[j])

    def u_grid(self, j):
        return bubble_value(self.r2(j), self.cfg.mu[j], self.eps, self.k_at_xi[j])

    def reassembly_error(self):
        total = sum(self.u_grid(j) + self.H_fields[j].values for j in range(self.cfg.m))
        return float(np.max(np.abs(np.where(self.mask.active, total, 0.0) - self.U.values)))


def build_ansatz(cfg, eps, greens, k=1.0, mask=None, params=None, require_resolved=True):
    """Assemble U(xi) with mu from the selection rule and one Navier solve pair per bubble.

    ``require_resolved`` enforces ``mu_j eps >= 4h``.  Diagnostics that only
    involve the (linear, smooth) boundary corrections do not need resolved
    cores and may pass ``False``.
    """
    er = make_eps_rho(eps)
    if not eps < 1.0:
        raise EpsOutOfRange("eps must be < 1 for the ansatz")
    if not check_admissible(cfg):
        raise NotAdmissible("configuration is not in the admissible set")
    evs = _evaluations(cfg, greens)
    mask = evs[0].mask if mask is None else mask
    kw = as_weight(k)
    mu = mu_from_xi(cfg, evs, kw)
    cfg = cfg.with_mu(mu)
    h = mask.h
    resolution = float(np.min(mu * eps) / h)
    if require_resolved and resolution < 4.0:
        raise CoreUnderResolved("min mu*eps = %.4g < 4h = %.4g" % (resolution * h, 4 * h))
    k_xi = np.asarray(kw(cfg.xi), dtype=float)

    U = np.zeros(mask.grid.shape)
    lapU_b = np.zeros(mask.grid.shape)
    H_fields, lapH = [], []
    aa6, aa8 = [], []
    for j in range(cfg.m):
        Hj, wj = boundary_correction(cfg.xi[j], mu[j], eps, k_xi[j], mask, params, return_intermediate=True)
        H_fields.append(Hj)
        lapH.append(wj)
        r2 = mask.grid.dist2(cfg.xi[j])
        uj = bubble_value(r2, mu[j], eps, k_xi[j])
        U += uj + Hj.values
        lapU_b += bubble_laplacian(r2, mu[j], eps) + wj.values
        aa6.append(expansion_discrepancy(Hj, evs[j], mu[j], eps, k_xi[j]))
        far = mask.active & (r2 >= cfg.delta0 ** 2)
        with np.errstate(divide="ignore"):
            G = -4.0 * np.log(r2) + evs[j].H_field.values
        aa8.append(float(np.max(np.abs((uj + Hj.values - G)[far]))))
    U = np.where(mask.active, U, 0.0)
    diag = {
        "aa6": aa6,
        "aa8": aa8,
        "boundary_U": float(np.max(np.abs(U[mask.boundary]))),
        "boundary_lapU": float(np.max(np.abs(lapU_b[mask.boundary]))),
        "core_resolution": resolution,
        "max_U": float(U[mask.active].max()),
    }
    log.debug("ansatz eps=%g mu=%s diagnostics=%s", eps, mu, diag)
    return AnsatzBundle(cfg, er, ScalarField4(mask.grid, U), H_fields, lapH, kw, mask, evs, k_xi, diag)


# --- weighted norms and the residual ---------------------------------------------------

def star_weight_at(points, xi, eps):
    """``sum_j (1 + |y - xi'_j|^2)^(-7/2) + eps^4`` at points given in x-coordinates."""
    p = np.asarray(points, dtype=float)
    w = np.full(p.shape[:-1], eps ** 4)
    for c in np.atleast_2d(xi):
        w += (1.0 + np.sum((p - c) ** 2, axis=-1) / eps ** 2) ** -3.5
    return w


def star_weight(xi, eps, mask):
    """The star-norm weight at every node, with ``y = x / eps``."""
    w = np.full(mask.grid.shape, eps ** 4)
    for p in np.atleast_2d(xi):
        w += (1.0 + mask.grid.dist2(p) / eps ** 2) ** -3.5
    return w


def star_norm(v, xi, eps, mask, exclude_layers=2):
    """Weighted sup ``||v||_*`` over Interior nodes deeper than ``exclude_layers``.

    Returns ``(norm, band)``: the second number is the same sup over the excluded layers.
    """
    vals = v.values if isinstance(v, ScalarField4) else np.asarray(v)
    ratio = np.abs(vals) / star_weight(xi, eps, mask)
    depth = mask.depth(limit=exclude_layers)
    inner = depth > exclude_layers
    band = mask.interior & ~inner
    norm = float(ratio[inner].max()) if inner.any() else 0.0
    band_norm = float(ratio[band].max()) if band.any() else 0.0
    return norm, band_norm


def _exp_guarded(u):
    if np.max(u) > EXP_GUARD:
        raise OverflowGuard("exponent %.4g exceeds %g" % (np.max(u), EXP_GUARD))
    return np.exp(u)


def core_samples(centre, mu_eps, outer, n_radii=48, rule=None):
    """Points on geometric shells ``|x - centre| in [mu_eps / 100, outer]``."""
    if rule is None:
        dirs, _ = sphere3_rule(4, 4, 8)
        dirs = np.concatenate([dirs, np.eye(4), -np.eye(4)])
    else:
        dirs = rule
    radii = np.geomspace(0.01 * mu_eps, outer, n_radii)
    pts = np.asarray(centre)[None, None, :] + radii[:, None, None] * dirs[None, :, :]
    return np.concatenate([np.asarray(centre)[None, :], pts.reshape(-1, 4)])


def _core_residual_sup(bundle, j):
    """Star-norm ratio of the residual sup over a sample cloud around ``xi_j``.

    With ``S_j = U - u_j`` smooth near ``xi_j`` (splined remainder plus the other bubbles exactly):
    ``R = eps^4 rho^4 e^{u_j} (k(xi_j) - k(x) e^{S_j})``.
    """
    mask = bundle.mask
    eps = bundle.eps
    mu = bundle.mu[j]
    rem = ScalarField4(mask.grid, _smooth_remainder(bundle, bundle.U.values))
    pts = core_samples(bundle.xi[j], mu * eps, bundle.cfg.delta0)
    Sx = interpolate(rem, pts, coeffs=spline_coefficients(rem, mask.active)) + _others_at(bundle, j, pts)
    uj = bundle.u_at(j, pts)
    R = eps ** 4 * bundle.er.rho4 * np.exp(uj) * (bundle.k_at_xi[j] - bundle.k(pts) * _exp_guarded(Sx))
    return float(np.max(np.abs(R) / star_weight_at(pts, bundle.xi, eps)))


def residual(bundle, mask=None, exclude_layers=2, return_band=False, hybrid=True):
    """Residual ``R(y) = eps^4 (Lap^2 U - rho^4 k e^U)(eps y)`` and its star norm.

    ``Lap^2 u_j`` is taken analytically (it equals ``rho^4 k(xi_j) e^{u_j}``);
    the boundary corrections contribute their discrete bilaplacian, which
    vanishes up to the linear-solver tolerance.  With ``hybrid`` the sup also
    runs over sample shells around each core, where ``u_j`` is exact and the
    smooth remainder is spline-interpolated, so unresolved cores still count.
    """
    mask = bundle.mask if mask is None else mask
    eps = bundle.eps
    bil = np.zeros(mask.grid.shape)
    for j in range(bundle.cfg.m):
        bil += bubble_bilaplacian(bundle.r2(j), bundle.mu[j], eps)
    H_sum = ScalarField4(mask.grid, sum(H.values for H in bundle.H_fields))
    w_sum = sum(w.values for w in bundle.lapH_fields)
    bil += navier_residual(H_sum, w_sum, None, mask)
    kx = bundle.k.on_grid(mask.grid)
    Rx = bil - bundle.er.rho4 * kx * _exp_guarded(np.where(mask.active, bundle.U.values, 0.0))
    R = np.where(mask.interior, eps ** 4 * Rx, 0.0)
    norm, band = star_norm(R, bundle.xi, eps, mask, exclude_layers)
    if hybrid:
        for j in range(bundle.cfg.m):
            norm = max(norm, _core_residual_sup(bundle, j))
    field_ = ScalarField4(mask.grid, R)
    return (field_, norm, band) if return_band else (field_, norm)


def linear_weight(bundle):
    """``W = k(eps y) e^{V(y)} = rho^4 eps^4 k e^U`` on active nodes."""
    mask = bundle.mask
    kx = bundle.k.on_grid(mask.grid)
    e = _exp_guarded(np.where(mask.active, bundle.U.values, 0.0))
    return ScalarField4(mask.grid, np.where(mask.active, bundle.er.rho4 * bundle.eps ** 4 * kx * e, 0.0))


def linear_weight_report(bundle, W=None):
    """Compare W with ``384 mu^4 / (mu^2 + |y - xi'_j|^2)^4`` inside ``|y - xi'_j| <= delta0 / (2 eps)``."""
    W = linear_weight(bundle) if W is None else W
    eps = bundle.eps
    out = []
    for j in range(bundle.cfg.m):
        mu = bundle.mu[j]
        r2y = bundle.r2(j) / eps ** 2
        lead = 384.0 * mu ** 4 / (mu ** 2 + r2y) ** 4
        sel = bundle.mask.active & (r2y <= (bundle.cfg.delta0 / (2 * eps)) ** 2)
        rel = np.abs(W.values[sel] / lead[sel] - 1.0)
        centre = float(interpolate(W, bundle.xi[j]))
        out.append({"max_rel_dev": float(rel.max()), "centre": centre, "centre_lead": 384.0 / mu ** 4})
    return out


def apply_linearized(bundle, psi, W=None):
    """``L_eps psi = eps^4 Lap_h^2 psi - W psi`` at Interior nodes (psi = Lap psi = 0 on the Boundary)."""
    mask = bundle.mask
    W = linear_weight(bundle) if W is None else W
    vals = psi.values if isinstance(psi, ScalarField4) else np.asarray(psi)
    p = ScalarField4(mask.grid, np.where(mask.interior, vals, 0.0))
    bil = laplacian(laplacian(p, mask), mask).values
    out = bundle.eps ** 4 * bil - W.values * p.values
    return ScalarField4(mask.grid, np.where(mask.interior, out, 0.0))


def _exp_minus_linear(psi):
    # e^psi - psi - 1 without cancellation for small |psi|
    small = np.abs(psi) < 1e-3
    series = psi * psi * (0.5 + psi * (1.0 / 6.0 + psi / 24.0))
    return np.where(small, series, np.expm1(psi) - psi)


def nonlinearity(bundle, psi, W=None):
    """``N(psi) = W (e^psi - psi - 1)``."""
    vals = psi.values if isinstance(psi, ScalarField4) else np.asarray(psi, dtype=float)
    if np.max(vals) > EXP_GUARD:
        raise OverflowGuard("psi exceeds %g" % EXP_GUARD)
    W = linear_weight(bundle) if W is None else W
    return ScalarField4(bundle.mask.grid, W.values * _exp_minus_linear(vals))


# --- kernel of the limit operator ------------------------------------------------------

def kernel_function(i, j, cfg, z, mu=None):
    """``Y_0 = 4(|z|^2 - mu^2)/(|z|^2 + mu^2)`` and ``Y_i = 8 z_i / (mu^2 + |z|^2)`` with ``mu = mu_j``."""
    if i not in (0, 1, 2, 3, 4):
        raise BadIndex("kernel index must be 0..4, got %r" % (i,))
    mu = cfg.mu[j] if mu is None else mu
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    if i == 0:
        out = 4.0 * (r2 - mu * mu) / (r2 + mu * mu)
    else:
        out = 8.0 * z[..., i - 1] / (mu * mu + r2)
    return float(out) if np.ndim(out) == 0 else out


def limit_weight(z, mu):
    r2 = np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
    return 384.0 * mu ** 4 / (mu * mu + r2) ** 4


def _bilap_stencil():
    """Offsets and coefficients of the composed 9-point Laplacian squared, in units of h^-4."""
    coef = {}

    def add(off, c):
        key = tuple(off)
        coef[key] = coef.get(key, 0.0) + c

    second = ((-1, 1.0), (0, -2.0), (1, 1.0))
    for a in range(4):
        for b in range(4):
            for s, cs in second:
                for t, ct in second:
                    off = [0, 0, 0, 0]
                    off[a] += s
                    off[b] += t
                    add(off, cs * ct)
    keys = [k for k, v in coef.items() if v != 0.0]
    return np.array(keys, dtype=float), np.array([coef[k] for k in keys])


_STENCIL = _bilap_stencil()


def discrete_bilaplacian_at(f, points, h):
    """``Lap_h^2 f`` at ``points`` for an analytic ``f`` evaluated on the shifted stencil."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    offs, c = _STENCIL
    vals = f(p[:, None, :] + h * offs[None, :, :])
    return vals @ c / h ** 4


def kernel_residual(i, mu, h, samples):
    """Max of ``|Lap_h^2 Y_i - 384 mu^4 / (mu^2 + |z|^2)^4 Y_i|`` over ``samples``."""
    Y = lambda z: kernel_function(i, 0, None, z, mu=mu)
    res = discrete_bilaplacian_at(Y, samples, h) - limit_weight(samples, mu) * Y(samples)
    return float(np.max(np.abs(res)))


def kernel_samples(mu, h, radius=10.0):
    """Nodes of the lattice ``h Z^4`` inside ``|z| <= radius * mu``."""
    n = int(np.floor(radius * mu / h))
    ax = h * np.arange(-n, n + 1)
    g = np.stack(np.meshgrid(ax, ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 4)
    return g[np.sum(g * g, axis=1) <= (radius * mu) ** 2]


# --- energy ----------------------------------------------------------------------------

def energy(u, rho, k, mask):
    """Grid quadrature of ``J = 1/2 int (Lap u)^2 - rho^4 int k e^u`` (Lap u = 0 on the Boundary)."""
    vals = u.values if isinstance(u, ScalarField4) else np.asarray(u)
    uf = ScalarField4(mask.grid, np.where(mask.active, vals, 0.0))
    lap = laplacian(uf, mask).values
    kx = as_weight(k).on_grid(mask.grid)
    return 0.5 * integrate(lap * lap, mask) - rho ** 4 * integrate(kx * _exp_guarded(uf.values), mask)


# Per-bubble constant of the expansion.  The first is the published value; the
# second follows from int log(1+|y|^2)(1+|y|^2)^-4 dy = 5 pi^2 / 36 (not pi^2 / 12).
EXPANSION_CONSTANT = -128.0 * math.pi ** 2
EXPANSION_CONSTANT_CORRECTED = -512.0 * math.pi ** 2 / 3.0


def energy_expansion_reference(m, eps, phi_value, constant=EXPANSION_CONSTANT):
    """``constant * m + 256 pi^2 m |log eps| + 32 pi^2 phi_m``; ``m`` may be a ConfigPoint."""
    m = getattr(m, "m", m)
    pi2 = math.pi ** 2
    return constant * m + 256.0 * pi2 * m * abs(math.log(eps)) + 32.0 * pi2 * phi_value


def sphere3_rule(n_chi=8, n_theta=8, n_phi=16):
    """Product Gauss rule on the unit 3-sphere; weights sum to ``2 pi^2``."""
    t, wt = roots_chebyu(n_chi)  # weight sqrt(1 - t^2): the sin^2 chi factor in t = cos chi
    s, ws = np.polynomial.legendre.leggauss(n_theta)
    ph = 2.0 * np.pi * np.arange(n_phi) / n_phi
    T, S, P = np.meshgrid(t, s, ph, indexing="ij")
    W = (wt[:, None, None] * ws[None, :, None]) * np.full(P.shape, 2.0 * np.pi / n_phi)
    st = np.sqrt(1.0 - T * T)
    ss = np.sqrt(1.0 - S * S)
    pts = np.stack([T, st * S, st * ss * np.cos(P), st * ss * np.sin(P)], axis=-1)
    return pts.reshape(-1, 4), W.ravel()


def _cutoff(r, delta):
    """1 on ``[0, delta/2]``, 0 beyond ``delta``, C^2 quintic smoothstep in between."""
    s = np.clip((np.asarray(r, dtype=float) - 0.5 * delta) / (0.5 * delta), 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _spherical_mean_spline(term, mask, centre, delta, n_radii, rule):
    radii = np.linspace(0.0, delta, n_radii)
    pts, w = rule
    P = (centre[None, None, :] + radii[:, None, None] * pts[None, :, :]).reshape(-1, 4)
    vals = None
    if term.smooth is not None:
        field_ = ScalarField4(mask.grid, term.smooth)
        vals = interpolate(field_, P, coeffs=spline_coefficients(field_, mask.active))
    if term.pointwise is not None:
        vals = term.pointwise(vals, P)
    means = vals.reshape(len(radii), -1) @ w / SPHERE3_AREA
    return CubicSpline(radii, means)


@dataclass
class ConcentratedTerm:
    """Integrand ``profile(r) * radial(r) * g(x)`` near one bubble; ``None`` means 1.

    ``g`` is the spline interpolant of the grid field ``smooth``, passed
    through ``pointwise(values, points)`` when given (``values`` is None
    without a grid field).  Nonlinear maps belong in ``pointwise``: splining
    ``e^S`` directly would ring wherever ``S`` has an unresolved spike.
    """

    radial: object = None
    smooth: np.ndarray = None
    pointwise: object = None


def hybrid_ball_integral(mask, centre, profile, terms, delta, n_radii=65, rule=None):
    """``int chi(|x - centre|) profile(r) sum_q radial_q(r) g_q(x) dx`` by radial quadrature.

    Smooth factors enter through their spherical means (spline-interpolated
    grid fields on a product Gauss rule).
    """
    rule = sphere3_rule() if rule is None else rule
    means = []
    for t in terms:
        plain = t.smooth is None and t.pointwise is None
        means.append(None if plain else
                     _spherical_mean_spline(t, mask, np.asarray(centre, dtype=float), delta, n_radii, rule))

    def g(r):
        acc = np.zeros_like(r)
        for t, M in zip(terms, means):
            part = np.ones_like(r) if t.radial is None else t.radial(r)
            if M is not None:
                part = part * M(r)
            acc += part
        return _cutoff(r, delta) * profile(r) * acc

    return radial_integrate(g, delta, n=2 ** 14).value


def _hybrid_delta(bundle, delta):
    if delta is not None:
        return float(delta)
    cfg = bundle.cfg
    d = min(cfg.delta0, float(np.min(cfg.domain.boundary_distance(cfg.xi))))
    if cfg.m > 1:
        d = min(d, 0.5 * cfg.min_separation())
    return d


def _chi_grid(bundle, j, delta):
    return _cutoff(np.sqrt(bundle.r2(j)), delta)


def _smooth_remainder(bundle, uv):
    """``u - sum_i u_i`` on the grid: free of the unresolved bubble spikes."""
    return np.where(bundle.mask.active, uv - sum(bundle.u_grid(i) for i in range(bundle.cfg.m)), 0.0)


def _others_at(bundle, j, pts):
    """``sum_{i != j} u_i`` evaluated analytically at ``pts``."""
    out = np.zeros(pts.shape[:-1])
    for i in range(bundle.cfg.m):
        if i != j:
            out += bundle.u_at(i, pts)
    return out


def hybrid_density_integral(bundle, u=None, delta=None, moment=False):
    """``rho^4 int k e^u`` (or ``rho^4 int u k e^u`` with ``moment``) with radial quadrature near cores.

    Near ``xi_j`` the density is written ``Lap^2 u_j * (k / k(xi_j)) e^S`` with
    ``S = u - u_j`` smooth there.  S enters at the sample points as the
    splined remainder ``u - sum_i u_i`` plus the other bubbles in closed form.
    """
    mask = bundle.mask
    u = bundle.U if u is None else u
    uv = np.where(mask.active, u.values if isinstance(u, ScalarField4) else u, 0.0)
    delta = _hybrid_delta(bundle, delta)
    kx = bundle.k.on_grid(mask.grid)
    dens = bundle.er.rho4 * kx * _exp_guarded(uv)
    if moment:
        dens = dens * uv
    rem = _smooth_remainder(bundle, uv)
    outside = np.ones(mask.grid.shape)
    total = 0.0
    for j in range(bundle.cfg.m):
        outside -= _chi_grid(bundle, j, delta)
        mu = bundle.mu[j]

        def S_at(vals, pts, j=j):
            return vals + _others_at(bundle, j, pts)

        def g(vals, pts, j=j):
            return bundle.k(pts) / bundle.k_at_xi[j] * _exp_guarded(S_at(vals, pts))

        prof = lambda r, mu=mu: bubble_bilaplacian(r * r, mu, bundle.eps)
        if moment:
            uj = lambda r, mu=mu, j=j: bubble_value(r * r, mu, bundle.eps, bundle.k_at_xi[j])
            terms = [ConcentratedTerm(uj, rem, g),
                     ConcentratedTerm(None, rem, lambda v, p, g=g, S_at=S_at: S_at(v, p) * g(v, p))]
        else:
            terms = [ConcentratedTerm(None, rem, g)]
        total += hybrid_ball_integral(mask, bundle.xi[j], prof, terms, delta)
    return total + integrate(dens * outside, mask)


def hybrid_mass(bundle, u=None, delta=None):
    """``rho^4 int k e^u`` with radial quadrature near each bubble core."""
    return hybrid_density_integral(bundle, u, delta)


def hybrid_solution_energy(bundle, u, delta=None):
    """``J`` of a solution, using ``int (Lap u)^2 = rho^4 int u k e^u`` (valid only when Lap^2 u = rho^4 k e^u)."""
    return 0.5 * hybrid_density_integral(bundle, u, delta, moment=True) - hybrid_density_integral(bundle, u, delta)


def hybrid_energy(bundle, delta=None):
    """``J_rho[U]`` using ``int (Lap U)^2 = sum_j int U Lap^2 u_j`` (Navier integration by parts)."""
    mask = bundle.mask
    delta = _hybrid_delta(bundle, delta)
    Uv = bundle.U.values
    rem = _smooth_remainder(bundle, Uv)
    quad = 0.0
    for j in range(bundle.cfg.m):
        mu = bundle.mu[j]
        bil = bubble_bilaplacian(bundle.r2(j), mu, bundle.eps)
        chi = _chi_grid(bundle, j, delta)
        ball = hybrid_ball_integral(
            mask, bundle.xi[j], lambda r, mu=mu: bubble_bilaplacian(r * r, mu, bundle.eps),
            [ConcentratedTerm(lambda r, mu=mu, j=j: bubble_value(r * r, mu, bundle.eps, bundle.k_at_xi[j]), None),
             ConcentratedTerm(None, rem, lambda v, p, j=j: v + _others_at(bundle, j, p))], delta)
        quad += ball + integrate(bil * Uv * (1.0 - chi), mask)
    return 0.5 * quad - hybrid_mass(bundle, delta=delta)


def ansatz_energy(bundle, hybrid=True, delta=None):
    if hybrid:
        return hybrid_energy(bundle, delta)
    return energy(bundle.U, bundle.er.rho, bundle.k, bundle.mask)
