"""Dirichlet Poisson solves on masked 4D grids.

The discrete operator is the 9-point Laplacian acting on Interior unknowns,
with Boundary values folded into the right-hand side so the system matrix
stays symmetric (negative definite).  It is solved by preconditioned
conjugate gradients on its negation.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence
from .grid import ScalarField4, lap_core

log = logging.getLogger(__name__)

PRECONDITIONERS = ("fast", "jacobi")


@dataclass(frozen=True)
class LinearSolveParams:
    """``max_iter=None`` means ``20 * sqrt(#interior nodes)``.

    ``preconditioner`` is ``"fast"`` (exact inverse of the Laplacian on the
    Interior bounding box, by tensor-product diagonalisation) or ``"jacobi"``.
    """

    tol: float = 1e-8
    max_iter: int = None
    preconditioner: str = "fast"

    def __post_init__(self):
        if not 0 < self.tol <= 1e-2:
            raise ValueError("tol must lie in (0, 1e-2], got %r" % self.tol)
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError("preconditioner must be one of %r" % (PRECONDITIONERS,))

    def iteration_cap(self, n_interior):
        if self.max_iter is not None:
            return self.max_iter
        return max(1, int(20 * np.sqrt(n_interior)))


class BoxEigensolver:
    """Exact inverse of the Dirichlet 9-point Laplacian on a full index box.

    Each axis is diagonalised by the orthonormal sine basis, so a solve is four
    dense axis transforms forward, a pointwise division, four transforms back.
    """

    def __init__(self, shape, h):
        self.shape = tuple(shape)
        self.h = h
        self._mats = []
        eig = []
        for n in self.shape:
            k = np.arange(1, n + 1)
            s = np.sqrt(2.0 / (n + 1)) * np.sin(np.outer(k, k) * np.pi / (n + 1))
            self._mats.append(s)
            eig.append((2.0 * np.cos(k * np.pi / (n + 1)) - 2.0) / h ** 2)
        self.eigenvalues = (eig[0][:, None, None, None] + eig[1][None, :, None, None]
                            + eig[2][None, None, :, None] + eig[3][None, None, None, :])

    def _transform(self, arr):
        # contracting axis 0 each time cycles the axes back to the original order
        for s in self._mats:
            arr = np.tensordot(arr, s, axes=([0], [0]))
        return arr

    def solve(self, f, power=1):
        """Return ``L^{-power} f`` for the box Laplacian ``L``."""
        coef = self._transform(f)
        coef /= self.eigenvalues if power == 1 else self.eigenvalues ** power
        return self._transform(coef)


def box_solver(mask):
    """Cached BoxEigensolver for the Interior bounding box of ``mask``."""
    if "box_solver" not in mask._cache:
        bb = mask.interior_bbox()
        shape = tuple(s.stop - s.start for s in bb)
        mask._cache["box_solver"] = BoxEigensolver(shape, mask.h)
    return mask._cache["box_solver"]


def _preconditioner(mask, kind):
    inner = mask.interior
    if kind == "jacobi":
        scale = mask.h ** 2 / 8.0
        return lambda r: r * scale
    bb = mask.interior_bbox()
    solver = box_solver(mask)
    full = mask.is_full_box()

    def apply(r):
        z = np.zeros_like(r)
        z[bb] = -solver.solve(r[bb])
        if not full:
            z *= inner
        return z

    return apply


def pcg(apply_a, b, precond, atol, max_iter, x0=None):
    """Preconditioned CG for an SPD operator; returns ``(x, iterations, residual_norm)``."""
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_a(x) if x0 is not None else b.copy()
    res = float(np.sqrt(np.vdot(r, r)))
    if res <= atol:
        return x, 0, res
    z = precond(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        alpha = rz / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        res = float(np.sqrt(np.vdot(r, r)))
        if res <= atol:
            return x, it, res
        z = precond(r)
        rz_new = float(np.vdot(r, z))
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise NoConvergence(max_iter, res)


def boundary_lift(bdata, mask):
    """Boundary values embedded in a zero field, and their Laplacian at Interior nodes."""
    vals = bdata.values if isinstance(bdata, ScalarField4) else np.asarray(bdata)
    g = np.where(mask.boundary, vals, 0.0)
    lg = lap_core(g, mask.h)
    lg *= mask.interior
    return g, lg


def solve_dirichlet(rhs, bdata, mask, params=None):
    """Solve ``Lap_h u = rhs`` on Interior nodes with ``u = bdata`` on Boundary nodes.

    ``rhs`` and ``bdata`` may be ScalarField4, arrays or ``None`` (zero); only
    their Interior and Boundary values are read.  Raises NoConvergence when the iteration cap is hit.
    """
    params = params or LinearSolveParams()
    inner = mask.interior
    h = mask.h
    if rhs is None:
        rhs_vals = np.zeros(mask.grid.shape)
    else:
        rhs_vals = rhs.values if isinstance(rhs, ScalarField4) else np.asarray(rhs, dtype=float)
    if bdata is None:
        g = np.zeros(mask.grid.shape)
        lg = g
        forcing_b = 0.0
    else:
        g, lg = boundary_lift(bdata, mask)
        forcing_b = float(np.linalg.norm(lg))
    f = np.where(inner, rhs_vals, 0.0)
    forcing = float(np.linalg.norm(f)) + forcing_b
    if forcing == 0.0:
        return ScalarField4(mask.grid, g)
    b = lg - f  # right-hand side of (-Lap_h) x = -(rhs - lift)

    def apply_a(v):
        out = lap_core(v, h)
        out *= inner
        np.negative(out, out=out)
        return out

    cap = params.iteration_cap(mask.n_interior)
    x, its, res = pcg(apply_a, b, _preconditioner(mask, params.preconditioner), params.tol * forcing, cap)
    log.debug("poisson: %d iterations, residual %.3e (target %.3e)", its, res, params.tol * forcing)
    return ScalarField4(mask.grid, g + x)


def dirichlet_inverse(mask, params=None):
    """Operator ``f -> u`` solving ``Lap_h u = f`` with zero Boundary values.

    Works on full-shape arrays (Interior values significant).  On plain box
    domains this is a direct spectral solve; otherwise it runs PCG.
    """
    params = params or LinearSolveParams()
    inner = mask.interior
    if mask.is_full_box():
        bb = mask.interior_bbox()
        solver = box_solver(mask)

        def apply(f):
            u = np.zeros(mask.grid.shape)
            u[bb] = solver.solve(np.asarray(f)[bb])
            return u

        return apply

    def apply(f):
        return solve_dirichlet(np.where(inner, f, 0.0), None, mask, params).values

    return apply
