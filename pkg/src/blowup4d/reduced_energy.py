"""The reduced energy of m concentration points and its critical points.

    phi_m(xi) = -sum_j {2 log k(xi_j) + H(xi_j, xi_j)} - sum_{i != j} G(xi_i, xi_j)

Green's functions are computed per source point and cached, since each one
costs two Poisson solves.
"""

import logging
import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .biharmonic import greens_gradient, greens_value, regular_gradient, regular_part
from .errors import CoincidentPoints, CollidingPoints, DuplicatePoints, NonpositiveWeight, NotAdmissible, PointOnWall
from .grid import BoxWithHole
from .weights import as_weight

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConfigPoint:
    """m points in a domain, the admissibility margin and (once computed) the scales mu."""

    xi: np.ndarray
    domain: object
    delta0: float = 0.1
    mu: np.ndarray = None

    def __post_init__(self):
        xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        if xi.shape[1] != 4:
            raise ValueError("points must be 4-vectors")
        object.__setattr__(self, "xi", xi)
        if self.mu is not None:
            object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).reshape(-1))

    @property
    def m(self):
        return self.xi.shape[0]

    def with_xi(self, xi):
        return replace(self, xi=np.asarray(xi, dtype=float), mu=None)

    def with_mu(self, mu):
        return replace(self, mu=np.asarray(mu, dtype=float))

    def min_separation(self):
        if self.m < 2:
            return math.inf
        d = np.linalg.norm(self.xi[:, None, :] - self.xi[None, :, :], axis=-1)
        return float(d[~np.eye(self.m, dtype=bool)].min())

    def to_dict(self):
        out = {"m": self.m, "xi": self.xi.tolist(), "delta0": self.delta0}
        if self.mu is not None:
            out["mu"] = self.mu.tolist()
        return out


def check_admissible(cfg):
    """Membership in O: boundary distance and pairwise separation both >= 2 delta0."""
    margin = 2.0 * cfg.delta0
    d = np.asarray(cfg.domain.boundary_distance(cfg.xi))
    if np.any(d < margin):
        return False
    return cfg.min_separation() >= margin


class GreensCache:
    """Green's evaluations keyed by source position rounded to ``quantum`` (default h/16).

    phi_m is piecewise constant on quantum-sized cells of a shared cache, so
    tight critical-point searches need a much finer quantum.  Reads are
    lock-free; each key has its own lock, so distinct sources solve in
    parallel and concurrent requests for one source solve it once.
    """

    def __init__(self, mask, params=None, quantum=None):
        self.mask = mask
        self.params = params
        self.quantum = mask.h / 16.0 if quantum is None else float(quantum)
        self._store = {}
        self._lock = threading.Lock()
        self._key_locks = {}
        self.solves = 0

    def _key(self, xi):
        q = self.quantum
        return tuple(int(v) for v in np.rint(np.asarray(xi, dtype=float) / q))

    def get(self, xi):
        key = self._key(xi)
        ev = self._store.get(key)
        if ev is not None:
            return ev
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            ev = self._store.get(key)
            if ev is None:
                ev = regular_part(xi, self.mask, self.params)
                with self._lock:
                    self._store[key] = ev
                    self.solves += 1
        return ev

    def for_config(self, cfg):
        return [self.get(p) for p in cfg.xi]

    def __len__(self):
        return len(self._store)


def _evaluations(cfg, greens):
    if hasattr(greens, "for_config"):
        return greens.for_config(cfg)
    greens = list(greens)
    if len(greens) != cfg.m:
        raise ValueError("need one Green's evaluation per point")
    return greens


def _weights_at(cfg, k):
    kv = np.asarray(as_weight(k)(cfg.xi), dtype=float)
    if np.any(~(kv > 0)):
        raise NonpositiveWeight("k <= 0 at a concentration point: %s" % kv.tolist())
    return kv


def _pair_greens(cfg, evs):
    """Matrix ``P[i, j] = G(xi_i, xi_j)`` read from the field of source j (diagonal zero)."""
    m = cfg.m
    out = np.zeros((m, m))
    if m < 2:
        return out
    h = evs[0].mask.h
    if cfg.min_separation() < 0.5 * h:
        raise CollidingPoints("points closer than h/2 = %g" % (0.5 * h))
    for j in range(m):
        others = [i for i in range(m) if i != j]
        try:
            vals = greens_value(evs[j], cfg.xi[others])
        except CoincidentPoints as exc:
            raise CollidingPoints(str(exc)) from exc
        out[others, j] = vals
    return out


def phi_m(cfg, greens, k=1.0):
    """Reduced energy of the configuration; the pair sum runs over ordered pairs."""
    evs = _evaluations(cfg, greens)
    kv = _weights_at(cfg, k)
    pairs = _pair_greens(cfg, evs)
    terms = [-(2.0 * math.log(kv[j]) + evs[j].H_diag) for j in range(cfg.m)]
    terms += [-pairs[i, j] for i in range(cfg.m) for j in range(cfg.m) if i != j]
    # fsum is exactly rounded, so the value is invariant under relabelling the points
    return math.fsum(terms)


def mu_from_xi(cfg, greens, k=1.0):
    """Scales with ``4 log mu_j = log k(xi_j) + H(xi_j, xi_j) + sum_{i != j} G(xi_i, xi_j)``."""
    evs = _evaluations(cfg, greens)
    kv = _weights_at(cfg, k)
    pairs = _pair_greens(cfg, evs)
    logs = [math.fsum([math.log(kv[j]), evs[j].H_diag] + [pairs[j, i] for i in range(cfg.m) if i != j])
            for j in range(cfg.m)]
    return np.exp(np.asarray(logs) / 4.0)


def _log_k_gradient(k, p, step):
    k = as_weight(k)
    offs = step * np.eye(4)
    vals = k(np.concatenate([p[None, :] + offs, p[None, :] - offs]))
    if np.any(~(vals > 0)):
        raise NonpositiveWeight("k <= 0 near %s" % p.tolist())
    return (np.log(vals[:4]) - np.log(vals[4:])) / (2.0 * step)


def grad_phi_m(cfg, greens, k=1.0, method="symmetry", h_fd=None):
    """Gradient of phi_m as an ``(m, 4)`` array.

    ``method="symmetry"`` uses one field per point: by symmetry of G the
    derivative of ``H(xi, xi)`` is twice the x-gradient of ``H(x, xi)`` at
    ``x = xi``, and the pair terms are x-gradients of the other fields.
    ``method="fd"`` differences phi_m itself (needs a GreensCache) with step
    ``h_fd`` (default: grid spacing).
    """
    if method in ("fd", "CentralFD"):
        return _grad_fd(cfg, greens, k, h_fd)
    if method not in ("symmetry", "SymmetryField"):
        raise ValueError("unknown gradient method %r" % (method,))
    evs = _evaluations(cfg, greens)
    _weights_at(cfg, k)
    h = evs[0].mask.h
    step = h if h_fd is None else h_fd
    if cfg.m > 1 and cfg.min_separation() < 0.5 * h:
        raise CollidingPoints("points closer than h/2")
    grad = np.zeros((cfg.m, 4))
    for j in range(cfg.m):
        g = -2.0 * _log_k_gradient(k, cfg.xi[j], step)
        g -= 2.0 * regular_gradient(evs[j], cfg.xi[j], step)
        for i in range(cfg.m):
            if i != j:
                g -= 2.0 * greens_gradient(evs[i], cfg.xi[j], step)
        grad[j] = g
    return grad


def _grad_fd(cfg, provider, k, h_fd):
    if not hasattr(provider, "for_config"):
        raise TypeError("finite-difference gradient needs a GreensCache provider")
    step = provider.mask.h if h_fd is None else h_fd
    grad = np.zeros((cfg.m, 4))
    for j in range(cfg.m):
        for a in range(4):
            xp = cfg.xi.copy()
            xm = cfg.xi.copy()
            xp[j, a] += step
            xm[j, a] -= step
            grad[j, a] = (phi_m(cfg.with_xi(xp), provider, k) - phi_m(cfg.with_xi(xm), provider, k)) / (2 * step)
    return grad


# --- projection onto the admissible set -------------------------------------------------

def project_admissible(cfg, sweeps=20):
    """Push points back into O; returns ``(projected_cfg, moved)``."""
    # land a hair inside O so rounding cannot undo the repair
    margin = 2.0 * cfg.delta0 * (1.0 + 1e-9)
    dom = cfg.domain
    xi = cfg.xi.copy()
    lo = np.asarray(dom.lo) + margin
    hi = np.asarray(dom.hi) - margin
    moved = False
    for _ in range(sweeps):
        changed = False
        clipped = np.clip(xi, lo, hi)
        if not np.allclose(clipped, xi, rtol=0, atol=0):
            changed = True
            xi = clipped
        if isinstance(dom, BoxWithHole):
            hlo, hhi = np.asarray(dom.hole_lo), np.asarray(dom.hole_hi)
            for j in range(len(xi)):
                nearest = np.clip(xi[j], hlo, hhi)
                d = xi[j] - nearest
                dist = float(np.linalg.norm(d))
                if dist < margin:
                    if dist == 0.0:
                        # inside the hole: exit through the closest face
                        depth = np.concatenate([xi[j] - hlo, hhi - xi[j]])
                        f = int(np.argmin(depth))
                        d = np.zeros(4)
                        d[f % 4] = -1.0 if f < 4 else 1.0
                        nearest = xi[j].copy()
                        nearest[f % 4] = hlo[f % 4] if f < 4 else hhi[f % 4]
                        dist = 1.0
                    xi[j] = nearest + d / dist * margin
                    changed = True
        for i in range(len(xi)):
            for j in range(i + 1, len(xi)):
                d = xi[j] - xi[i]
                dist = float(np.linalg.norm(d))
                if dist < margin:
                    u = d / dist if dist > 0 else np.eye(4)[0]
                    mid = 0.5 * (xi[i] + xi[j])
                    xi[i] = mid - 0.5 * margin * u
                    xi[j] = mid + 0.5 * margin * u
                    changed = True
        moved |= changed
        if not changed:
            break
    return cfg.with_xi(xi), moved


@dataclass
class CriticalSearchReport:
    final: ConfigPoint
    grad_norm: float
    phi: float
    trace: list = field(default_factory=list)
    reason: str = "MaxIter"

    def to_dict(self):
        return {"final": self.final.to_dict(), "grad_norm": self.grad_norm, "phi": self.phi,
                "reason": self.reason, "iterations": len(self.trace) - 1, "trace": self.trace}


def find_critical(start, mode="min", tol=1e-3, max_iter=200, greens=None, k=1.0, max_step=None,
                  armijo=1e-4, max_halvings=30):
    """Projected gradient descent (``mode="min"``) or ascent (``"max"``) of phi_m inside O.

    Each line search starts from the Barzilai-Borwein step ``s.s / s.y`` (twice
    the previous step when that is unavailable) and backtracks by halving
    until the Armijo condition holds.  A step that had to be projected back
    into O ends the search with reason ``HitBoundaryOfO``.
    """
    if greens is None or not hasattr(greens, "for_config"):
        raise TypeError("find_critical needs a GreensCache provider")
    if not check_admissible(start):
        raise NotAdmissible("starting configuration is not in the admissible set")
    mode = {"Minimize": "min", "Maximize": "max"}.get(mode, mode)
    if mode not in ("min", "max"):
        raise ValueError("mode must be 'min' or 'max'")
    sign = 1.0 if mode == "min" else -1.0
    max_step = start.delta0 if max_step is None else max_step

    cfg = start
    phi = phi_m(cfg, greens, k)
    grad = grad_phi_m(cfg, greens, k)
    gnorm = float(np.linalg.norm(grad))
    trace = [{"iter": 0, "xi": cfg.xi.tolist(), "phi": phi, "grad_norm": gnorm, "step": 0.0}]
    t_next = max_step / max(gnorm, 1e-300)
    reason = "MaxIter"
    for it in range(1, max_iter + 1):
        if gnorm <= tol:
            reason = "Converged"
            break
        direction = -sign * grad
        t = min(t_next, max_step / gnorm)
        accepted = False
        for _ in range(max_halvings):
            trial, moved = project_admissible(cfg.with_xi(cfg.xi + t * direction))
            phi_trial = phi_m(trial, greens, k)
            decrease = float(np.sum(grad * (trial.xi - cfg.xi)))
            if sign * (phi_trial - phi) <= armijo * sign * decrease:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            reason = "Stalled"
            break
        s_step = (trial.xi - cfg.xi).ravel()
        cfg = trial
        phi = phi_trial
        grad_new = grad_phi_m(cfg, greens, k)
        sy = float(s_step @ (sign * (grad_new - grad)).ravel())
        t_next = float(s_step @ s_step) / sy if sy > 0 else 2.0 * t
        grad = grad_new
        gnorm = float(np.linalg.norm(grad))
        trace.append({"iter": it, "xi": cfg.xi.tolist(), "phi": phi, "grad_norm": gnorm, "step": t})
        log.debug("find_critical %d: phi=%.10g |grad|=%.3e", it, phi, gnorm)
        if moved:
            reason = "HitBoundaryOfO"
            break
    else:
        if gnorm <= tol:
            reason = "Converged"
    if reason == "MaxIter" and gnorm <= tol:
        reason = "Converged"
    return CriticalSearchReport(cfg, gnorm, phi, trace, reason)


# --- half-space scaling identities --------------------------------------------------------

def _check_distinct(x):
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    if np.any(d[~np.eye(len(x), dtype=bool)] == 0.0):
        raise DuplicatePoints("points must be pairwise distinct")


def psi_k_scaling(points):
    """``Psi_k = -8 sum_{i != j} log|x_i - x_j|`` and ``sum_i grad_i Psi_k . x_i``."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    _check_distinct(x)
    k = len(x)
    value = 0.0
    deriv = 0.0
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            d = x[i] - x[j]
            r2 = float(d @ d)
            value += -4.0 * math.log(r2)
            # grad_{x_i} and grad_{x_j} of -8 log|x_i - x_j|, dotted with the points
            g = -8.0 * d / r2
            deriv += float(g @ x[i]) - float(g @ x[j])
    return value, deriv


def reflect(x):
    y = np.array(x, dtype=float, copy=True)
    y[..., 3] *= -1.0
    return y


def phi_halfspace_scaling(points):
    """Half-space reduced energy and its derivative along ``x -> lambda x`` at lambda = 1.

    ``phi = -8 sum_j log|x_j - xbar_j| + 8 sum_{i != j} log(|x_i - x_j| / |x_i - xbar_j|)``
    with ``xbar`` the mirror image across ``{x_4 = 0}``.  The derivative is
    assembled from analytic gradients as ``sum_i grad_i phi . x_i``.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(x[:, 3] <= 0):
        raise PointOnWall("all points need a positive fourth coordinate")
    _check_distinct(x)
    k = len(x)
    xb = reflect(x)
    grads = np.zeros_like(x)
    value = 0.0

    def log_term(coef, a, b, ia, ib, reflect_b):
        # coef * log|x_a - T x_b| with T the identity or the mirror map
        nonlocal value
        d = a - b
        r2 = float(d @ d)
        value += 0.5 * coef * math.log(r2)
        g = coef * d / r2
        grads[ia] += g
        grads[ib] -= reflect(g) if reflect_b else g

    for j in range(k):
        log_term(-8.0, x[j], xb[j], j, j, True)
    for i in range(k):
        for j in range(k):
            if i != j:
                log_term(8.0, x[i], x[j], i, j, False)
                log_term(-8.0, x[i], xb[j], i, j, True)
    deriv = float(np.sum(grads * x))
    return value, deriv
