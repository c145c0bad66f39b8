"""Newton solution of ``Lap^2 u = rho^4 k e^u`` with Navier conditions, and continuation in eps.

The discrete problem is ``F(u) = Lap_h(Lap_h u) - rho^4 k e^u = 0`` on
Interior nodes with ``u = Lap_h u = 0`` on the Boundary.  Its Jacobian
``Lap_h^2 - diag(W)`` is solved by GMRES preconditioned with the exact
Navier inverse ``Lap_h^-2`` (two Dirichlet solves).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .ansatz import _exp_guarded, build_ansatz, energy, hybrid_mass, hybrid_solution_energy, make_eps_rho
from .errors import Blowup4DError, JacobianSolveFailure, NoConvergence, OverflowGuard, StageFailed
from .grid import ScalarField4, integrate, interpolate, laplacian
from .poisson import LinearSolveParams, box_solver, dirichlet_inverse
from .weights import as_weight

log = logging.getLogger(__name__)

MAX_HALVINGS = 6


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residuals: list
    u: ScalarField4
    mass: float
    energy: float
    correction_sup: float
    eps: float
    rho: float
    cfg: dict = None
    mass_grid: float = None
    gmres_iterations: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    max_U: float = None
    branch_jump: bool = False
    grid_nodes: int = None

    @property
    def correction_ratio(self):
        """``||u - U||_inf / (eps |log eps|)``."""
        return self.correction_sup / (self.eps * abs(math.log(self.eps)))

    def quadratic_tail(self, factor=10.0):
        """True when each of the last two residual reductions is at least ``factor``."""
        r = [v for v in self.residuals if v > 0]
        if len(self.residuals) >= 1 and self.residuals[-1] == 0.0:
            return True
        if len(r) < 3:
            return False
        return r[-3] / r[-2] >= factor and r[-2] / r[-1] >= factor

    def to_dict(self):
        return {
            "converged": self.converged, "iterations": self.iterations, "residuals": list(self.residuals),
            "mass": self.mass, "mass_grid": self.mass_grid, "energy": self.energy,
            "correction_sup": self.correction_sup, "correction_ratio": self.correction_ratio if self.eps < 1 else None,
            "eps": self.eps, "rho": self.rho, "cfg": self.cfg, "gmres_iterations": list(self.gmres_iterations),
            "steps": list(self.steps), "max_U": self.max_U, "branch_jump": self.branch_jump,
            "grid_nodes": self.grid_nodes,
        }


def navier_inverse(mask, params=None):
    """``f -> Lap_h^-2 f`` with Navier conditions, on full-shape arrays."""
    inner = mask.interior
    if mask.is_full_box():
        bb = mask.interior_bbox()
        solver = box_solver(mask)

        def apply(f):
            out = np.zeros(mask.grid.shape)
            out[bb] = solver.solve(np.asarray(f)[bb], power=2)
            return out

        return apply
    single = dirichlet_inverse(mask, params)
    return lambda f: single(np.where(inner, single(f), 0.0))


def bilaplacian(u, mask):
    """``Lap_h(Lap_h u)`` at Interior nodes with ``u`` and ``Lap_h u`` zero on the Boundary."""
    vals = u.values if isinstance(u, ScalarField4) else u
    uf = ScalarField4(mask.grid, np.where(mask.interior, vals, 0.0))
    return laplacian(laplacian(uf, mask), mask).values


class _InteriorMap:
    """Pack Interior values into a flat vector and back."""

    def __init__(self, mask):
        self.mask = mask
        self.full = mask.is_full_box()
        self.bb = mask.interior_bbox()
        self.inner = mask.interior
        self.n = mask.n_interior

    def to_vec(self, a):
        return a[self.bb].ravel() if self.full else a[self.inner]

    def to_full(self, v):
        out = np.zeros(self.mask.grid.shape)
        if self.full:
            out[self.bb] = v.reshape(tuple(s.stop - s.start for s in self.bb))
        else:
            out[self.inner] = v
        return out


def _residual_metric(F, dens):
    return float(np.max(np.abs(F))) / (1.0 + float(np.max(dens)))


def newton_solve(initial, eps, k, mask, tol=1e-9, max_iter=30, params=None, U_ref=None,
                 gmres_rtol=1e-10, gmres_restart=12, gmres_maxiter=40):
    """Damped Newton from ``initial`` (Boundary values are forced to zero).

    Convergence: ``max|F(u)| <= tol * (1 + rho^4 max k e^u)``.  Each step is
    halved at most six times until the preconditioned residual ``||Lap_h^-2 F||_2``
    decreases; the Newton direction is a descent direction for that norm.
    """
    er = make_eps_rho(eps)
    rho4 = er.rho4
    kx = as_weight(k).on_grid(mask.grid)
    imap = _InteriorMap(mask)
    binv = navier_inverse(mask, params)
    vals = initial.values if isinstance(initial, ScalarField4) else np.asarray(initial, dtype=float)
    u = np.where(mask.interior, vals, 0.0)

    def evaluate(v):
        dens = rho4 * kx * _exp_guarded(v)
        dens = np.where(mask.interior, dens, 0.0)
        return bilaplacian(v, mask) - dens, dens

    F, dens = evaluate(u)
    res = _residual_metric(F, dens)
    BF = binv(F)
    merit = float(np.linalg.norm(BF))
    residuals = [res]
    gm_its, steps = [], []
    converged = res <= tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        W = dens

        def mv(v):
            return v - imap.to_vec(binv(W * imap.to_full(v)))

        A = LinearOperator((imap.n, imap.n), matvec=mv, dtype=float)
        rhs = -imap.to_vec(BF)
        count = [0]

        def cb(_):
            count[0] += 1

        d, info = gmres(A, rhs, rtol=gmres_rtol, restart=gmres_restart, maxiter=gmres_maxiter,
                        callback=cb, callback_type="pr_norm")
        if info < 0 or not np.all(np.isfinite(d)):
            raise JacobianSolveFailure("GMRES breakdown (info=%d)" % info)
        if info > 0:
            achieved = np.linalg.norm(mv(d) - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if achieved > 1e-4:
                raise JacobianSolveFailure("GMRES stalled at relative residual %.3e" % achieved)
        gm_its.append(count[0])
        delta = imap.to_full(d)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = u + t * delta
            try:
                F_t, dens_t = evaluate(trial)
            except OverflowGuard:
                t *= 0.5
                continue
            BF_t = binv(F_t)
            merit_t = float(np.linalg.norm(BF_t))
            if merit_t < merit:
                break
            t *= 0.5
        else:
            raise NoConvergence(it, res, stage="newton:damping",
                                message="no decrease after %d halvings; residuals %s" % (MAX_HALVINGS, residuals))
        u, F, dens, BF, merit = trial, F_t, dens_t, BF_t, merit_t
        res = _residual_metric(F, dens)
        residuals.append(res)
        steps.append(t)
        log.debug("newton eps=%g it=%d residual=%.3e step=%g gmres=%d", eps, it, res, t, count[0])
        converged = res <= tol
    if not converged:
        raise NoConvergence(it, res, stage="newton", message="residuals %s" % residuals)

    uf = ScalarField4(mask.grid, u)
    m_grid = rho4 * integrate(kx * np.exp(u), mask)
    corr = max_U = None
    if U_ref is not None:
        Uv = U_ref.values if isinstance(U_ref, ScalarField4) else U_ref
        corr = float(np.max(np.abs(np.where(mask.active, u - Uv, 0.0))))
        max_U = float(np.max(Uv[mask.active]))
    return SolveReport(True, it, residuals, uf, m_grid, energy(uf, er.rho, k, mask),
                       float("nan") if corr is None else corr, eps, er.rho, None, m_grid,
                       gm_its, steps, max_U, False, mask.grid.n[0])


def mass(u, rho, k, mask, hybrid=False, bundle=None):
    """``rho^4 int k e^u``; hybrid quadrature needs the ansatz bundle that locates the cores."""
    if hybrid:
        if bundle is None:
            raise ValueError("hybrid mass needs an ansatz bundle")
        return hybrid_mass(bundle, u)
    vals = u.values if isinstance(u, ScalarField4) else np.asarray(u)
    kx = as_weight(k).on_grid(mask.grid)
    return rho ** 4 * integrate(kx * _exp_guarded(np.where(mask.active, vals, 0.0)), mask)


def concentration_diagnostics(u, cfg, delta, mask=None):
    """Sup of ``u`` inside each ``B_delta(xi_j)`` and over the active nodes outside all balls."""
    grid = u.grid
    mask_active = np.ones(grid.shape, dtype=bool) if mask is None else mask.active
    if mask is not None and not delta > 2 * mask.h:
        raise ValueError("delta must exceed 2h")
    outside = mask_active.copy()
    inner = []
    for p in cfg.xi:
        ball = grid.dist2(p) < delta * delta
        sel = ball & mask_active
        inner.append(float(u.values[sel].max()) if sel.any() else float("nan"))
        outside &= ~ball
    ext = float(u.values[outside].max()) if outside.any() else float("nan")
    return {"interior": inner, "exterior": ext}


def nodes_for_eps(eps, mu, side, resolution=4.0, multiple=8, minimum=17):
    """Smallest node count with ``(n - 1) % multiple == 0`` and ``mu eps >= resolution * h``."""
    cells = max(minimum - 1, int(math.ceil(resolution * side / (mu * eps))))
    cells = int(math.ceil(cells / multiple) * multiple)
    return cells + 1


def _transfer(field_, grid):
    """Cubic-spline transfer of a field (zero outside its grid) onto another grid's nodes."""
    pts = np.stack(np.meshgrid(*[grid.coords(a) for a in range(4)], indexing="ij"), axis=-1)
    return interpolate(field_, pts.reshape(-1, 4)).reshape(grid.shape)


def continuation(cfg_star, eps_schedule, k, masks, tol=1e-9, params=None, greens_factory=None, hybrid=True,
                 newton_kwargs=None):
    """Newton solves along a decreasing eps schedule on eps-coupled grids.

    ``masks`` is one DomainMask, a list (one per stage) or a callable
    ``eps -> DomainMask``.  Stage ``s`` starts from its own ansatz plus the
    previous stage's correction ``u - U`` transferred to the new grid.
    Stages whose correction exceeds ``max U / 10`` are flagged ``branch_jump``.
    """
    from .reduced_energy import GreensCache

    eps_schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    greens_factory = greens_factory or (lambda m: GreensCache(m, params))
    newton_kwargs = newton_kwargs or {}
    reports = []
    prev = None
    for s, eps in enumerate(eps_schedule):
        try:
            mask = masks(eps) if callable(masks) else (masks[s] if isinstance(masks, (list, tuple)) else masks)
            cfg = cfg_star.with_xi(cfg_star.xi)
            bundle = build_ansatz(cfg, eps, greens_factory(mask), k, mask, params)
            start = bundle.U.values.copy()
            if prev is not None:
                prev_u, prev_U = prev
                corr = ScalarField4(prev_u.grid, prev_u.values - prev_U.values)
                if corr.grid == mask.grid:
                    start += corr.values
                else:
                    start += _transfer(corr, mask.grid)
                start = np.where(mask.interior, start, 0.0)
            rep = newton_solve(ScalarField4(mask.grid, start), eps, k, mask, tol, params=params,
                               U_ref=bundle.U, **newton_kwargs)
            rep.cfg = bundle.cfg.to_dict()
            if hybrid:
                rep.mass = hybrid_mass(bundle, rep.u)
                rep.energy = hybrid_solution_energy(bundle, rep.u)
            rep.branch_jump = rep.correction_sup > rep.max_U / 10.0
            log.info("stage %d eps=%g n=%d mass/64pi^2=%.6f corr=%.4g branch_jump=%s", s, eps,
                     mask.grid.n[0], rep.mass / (64 * math.pi ** 2), rep.correction_sup, rep.branch_jump)
            reports.append(rep)
            prev = (rep.u, bundle.U)
            del bundle
        except Blowup4DError as exc:
            raise StageFailed(s, list(reports), exc) from exc
    return reports


def richardson(eps, values, order=2):
    """Least-squares fit ``v = v0 + c eps^order``; returns ``v0``."""
    e = np.asarray(eps, dtype=float) ** order
    A = np.column_stack([np.ones_like(e), e])
    (v0, _), *_ = np.linalg.lstsq(A, np.asarray(values, dtype=float), rcond=None)
    return float(v0)
