"""Acceptance criteria as runnable checks.

Each ``criterion_N(seed)`` returns a CriterionResult; ``run_criteria`` runs a
selection and ``summary`` turns the results into a deterministic record
(no timings, so repeated runs compare byte for byte).
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .ansatz import (build_ansatz, energy_expansion_reference, hybrid_energy, hybrid_mass, kernel_residual,
                     kernel_samples, residual)
from .biharmonic import greens_value, regular_part, solve_navier
from .grid import Box, Grid4, build_domain, radial_integrate
from .kexpr import evaluate, parse
from .errors import KExprError
from .poisson import LinearSolveParams, solve_dirichlet
from .reduced_energy import (ConfigPoint, GreensCache, find_critical, phi_halfspace_scaling, phi_m,
                             psi_k_scaling)
from .solver import continuation, nodes_for_eps, richardson

log = logging.getLogger(__name__)

PI2 = math.pi ** 2
MASS_UNIT = 64.0 * PI2
UNIT_BOX = Box((0.0,) * 4, (1.0,) * 4)
CENTRE = (0.5, 0.5, 0.5, 0.5)


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    measured: dict
    detail: str = ""
    seconds: float = field(default=0.0, compare=False)

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self):
        return "criterion %2d %-34s %s  %s" % (self.id, self.name, "PASS" if self.passed else "FAIL", self.detail)

    def to_dict(self):
        return {"id": self.id, "name": self.name, "passed": self.passed, "measured": self.measured,
                "detail": self.detail}


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])


def unit_box_mask(nodes):
    return build_domain(UNIT_BOX, Grid4.for_box(UNIT_BOX.lo, UNIT_BOX.hi, nodes))


# 1 --------------------------------------------------------------------------------------

def criterion_1(seed=0):
    r_max = 1.0e3
    one = radial_integrate(lambda r: (1.0 + r * r) ** -4, r_max)
    lg = radial_integrate(lambda r: np.log1p(r * r) * (1.0 + r * r) ** -4, r_max)
    v1 = one.value + one.tail
    v2 = lg.value + lg.tail
    e1 = abs(v1 / (PI2 / 6.0) - 1.0)
    e2 = abs(v2 / (PI2 / 12.0) - 1.0)
    measured = {"int_inv4": v1, "target_inv4": PI2 / 6.0, "rel_err_inv4": e1,
                "int_log_inv4": v2, "target_log_inv4": PI2 / 12.0, "rel_err_log_inv4": e2,
                "closed_form_log_inv4": 5.0 * PI2 / 36.0}
    ok = e1 <= 1e-6 and e2 <= 1e-6
    detail = "rel errors %.2e, %.2e (log integral = %.12f; 5pi^2/36 = %.12f)" % (e1, e2, v2, 5 * PI2 / 36)
    return CriterionResult(1, "analytic constants", ok, measured, detail)


# 2 --------------------------------------------------------------------------------------

def _halfspace_points(rng, k):
    while True:
        x = rng.uniform(-1.0, 1.0, size=(k, 4))
        x[:, 3] = rng.uniform(0.05, 1.5, size=k)
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)
        if k == 1 or d[~np.eye(k, dtype=bool)].min() > 1e-3:
            return x


def criterion_2(seed=0):
    rng = np.random.default_rng(seed + 2)
    worst = {"psi": 0.0, "phi": 0.0}
    seen = {"psi": {}, "phi": {}}
    for k in (2, 3, 5):
        target = -8.0 * k * (k - 1)
        for _ in range(100):
            x = _halfspace_points(rng, k)
            for name, fn in (("psi", psi_k_scaling), ("phi", phi_halfspace_scaling)):
                d = fn(x)[1]
                worst[name] = max(worst[name], abs(d / target - 1.0))
                seen[name][k] = d
    ok = worst["psi"] <= 1e-10 and worst["phi"] <= 1e-10
    measured = {"max_rel_err_psi": worst["psi"], "max_rel_err_phi": worst["phi"],
                "sample_phi_derivative": {str(k): v for k, v in seen["phi"].items()},
                "targets": {str(k): -8.0 * k * (k - 1) for k in (2, 3, 5)}}
    detail = "psi max rel err %.2e; phi max rel err %.2e (phi derivative for k=2,3,5: %s)" % (
        worst["psi"], worst["phi"], ", ".join("%.6g" % seen["phi"][k] for k in (2, 3, 5)))
    return CriterionResult(2, "scaling identities", ok, measured, detail)


# 3 --------------------------------------------------------------------------------------

def _manufactured_errors(nodes):
    mask = unit_box_mask(nodes)
    ax = mask.grid.open_axes()
    u = np.sin(np.pi * ax[0]) * np.sin(np.pi * ax[1]) * np.sin(np.pi * ax[2]) * np.sin(np.pi * ax[3])
    params = LinearSolveParams(tol=1e-12)
    p = solve_dirichlet(-4.0 * PI2 * u, None, mask, params)
    b = solve_navier(16.0 * PI2 * PI2 * u, None, None, mask, params)
    return float(np.max(np.abs(p.values - u))), float(np.max(np.abs(b.values - u)))


def criterion_3(seed=0):
    grids = (9, 17, 33)
    errs = [_manufactured_errors(n) for n in grids]
    pois = [e[0] for e in errs]
    nav = [e[1] for e in errs]
    ratios_p = [pois[i] / pois[i + 1] for i in range(2)]
    ratios_n = [nav[i] / nav[i + 1] for i in range(2)]
    ok = all(3.2 <= r <= 4.8 for r in ratios_p + ratios_n)
    measured = {"grids": list(grids), "poisson_errors": pois, "navier_errors": nav,
                "poisson_ratios": ratios_p, "navier_ratios": ratios_n}
    detail = "poisson ratios %s, navier ratios %s" % (["%.3f" % r for r in ratios_p], ["%.3f" % r for r in ratios_n])
    return CriterionResult(3, "solver convergence order", ok, measured, detail)


# 4 --------------------------------------------------------------------------------------

HALFSPACE_BOX = Box((-2.0, -2.0, -2.0, 0.0), (2.0, 2.0, 2.0, 2.0))


def criterion_4(seed=0, t=0.25):
    grid = Grid4.for_box(HALFSPACE_BOX.lo, HALFSPACE_BOX.hi, 33)
    mask = build_domain(HALFSPACE_BOX, grid)
    ev = regular_part([0.0, 0.0, 0.0, t], mask)
    target = 8.0 * math.log(2.0 * t)
    rel = abs(ev.H_diag / target - 1.0)
    measured = {"box": [list(HALFSPACE_BOX.lo), list(HALFSPACE_BOX.hi)], "grid": list(grid.shape),
                "t": t, "H_diag": ev.H_diag, "target": target, "rel_err": rel}
    return CriterionResult(4, "half-space regular part", rel <= 0.10, measured,
                           "H = %.5f vs 8 log 2t = %.5f (rel %.3f)" % (ev.H_diag, target, rel))


# 5 --------------------------------------------------------------------------------------

def criterion_5(seed=0, nodes=25, pairs=10):
    rng = np.random.default_rng(seed + 5)
    params = LinearSolveParams()
    mask = unit_box_mask(nodes)
    h = mask.h
    worst_sym = 0.0
    worst_bnd = 0.0
    records = []
    n = 0
    while n < pairs:
        a, b = rng.uniform(0.2, 0.8, size=(2, 4))
        if np.linalg.norm(a - b) < 0.2:
            continue
        ea, eb = regular_part(a, mask, params), regular_part(b, mask, params)
        gab, gba = greens_value(eb, a), greens_value(ea, b)
        scale = max(abs(gab), abs(gba))
        sym = abs(gab - gba) / (h * h * scale)
        bnd = max(float(np.max(np.abs(e.G_field()[mask.boundary]))) for e in (ea, eb))
        worst_sym = max(worst_sym, sym)
        worst_bnd = max(worst_bnd, bnd)
        records.append({"a": a.tolist(), "b": b.tolist(), "G_ab": gab, "G_ba": gba})
        n += 1
    ok = worst_sym <= 5.0 and worst_bnd <= 10.0 * params.tol
    measured = {"grid": nodes, "max_sym_over_h2_scale": worst_sym, "max_boundary_G": worst_bnd,
                "linear_tol": params.tol, "pairs": records}
    return CriterionResult(5, "Green symmetry and boundary", ok, measured,
                           "max |G(a,b)-G(b,a)|/(h^2|G|) = %.3f, max |G| on boundary = %.2e" % (worst_sym, worst_bnd))


# 6 --------------------------------------------------------------------------------------

def criterion_6(seed=0, nodes=25, eps_values=(0.2, 0.1, 0.05)):
    mask = unit_box_mask(nodes)
    cache = GreensCache(mask)
    cfg = ConfigPoint([CENTRE], UNIT_BOX)
    aa6, aa8 = [], []
    for eps in eps_values:
        b = build_ansatz(cfg, eps, cache, 1.0, mask, require_resolved=False)
        aa6.append(b.diagnostics["aa6"][0])
        aa8.append(b.diagnostics["aa8"][0])
    s6, s8 = loglog_slope(eps_values, aa6), loglog_slope(eps_values, aa8)
    ok = 1.6 <= s6 <= 2.4 and 1.6 <= s8 <= 2.4
    measured = {"eps": list(eps_values), "aa6": aa6, "aa8": aa8, "slope_aa6": s6, "slope_aa8": s8, "grid": nodes}
    return CriterionResult(6, "ansatz expansion trends", ok, measured, "slopes %.3f (Aa6), %.3f (Aa8)" % (s6, s8))


# 7 --------------------------------------------------------------------------------------

RESIDUAL_POINT = (0.25, 0.5, 0.5, 0.5)


def criterion_7(seed=0, nodes=25, eps_values=(0.025, 0.0125, 0.00625), point=RESIDUAL_POINT):
    mask = unit_box_mask(nodes)
    cache = GreensCache(mask)
    cfg = ConfigPoint([point], UNIT_BOX)
    norms, bands = [], []
    for eps in eps_values:
        b = build_ansatz(cfg, eps, cache, 1.0, mask, require_resolved=False)
        _, s, band = residual(b, return_band=True)
        norms.append(s)
        bands.append(band)
    slope = loglog_slope(eps_values, norms)
    measured = {"eps": list(eps_values), "star_norms": norms, "band_norms": bands, "slope": slope,
                "xi": list(point), "grid": nodes}
    return CriterionResult(7, "residual bound trend", 0.7 <= slope <= 1.3, measured, "slope %.3f" % slope)


# 8 --------------------------------------------------------------------------------------

def criterion_8(seed=0, nodes=25, eps_values=(0.2, 0.1, 0.05, 0.025)):
    mask = unit_box_mask(nodes)
    cache = GreensCache(mask)
    cfg = ConfigPoint([CENTRE], UNIT_BOX)
    phi = phi_m(cfg, cache)
    rems, Js, refs = [], [], []
    for eps in eps_values:
        b = build_ansatz(cfg, eps, cache, 1.0, mask, require_resolved=False)
        J = hybrid_energy(b)
        ref = energy_expansion_reference(cfg, eps, phi)
        Js.append(J)
        refs.append(ref)
        rems.append(abs(J - ref))
    slope = loglog_slope(eps_values, rems)
    phi_term = abs(32.0 * PI2 * phi)
    frac = rems[-1] / phi_term
    ok = 0.6 <= slope <= 1.4 and frac <= 0.05
    measured = {"eps": list(eps_values), "J": Js, "reference": refs, "remainder": rems, "slope": slope,
                "phi": phi, "remainder_over_phi_term": frac, "grid": nodes}
    return CriterionResult(8, "energy expansion", ok, measured,
                           "slope %.3f, remainder/|32 pi^2 phi| = %.3f at eps=%g (remainders %s)"
                           % (slope, frac, eps_values[-1], ", ".join("%.2f" % r for r in rems)))


# 9 --------------------------------------------------------------------------------------

def criterion_9(seed=0, nodes=17, starts=5, tol=1e-3):
    rng = np.random.default_rng(seed + 9)
    mask = unit_box_mask(nodes)
    cache = GreensCache(mask, LinearSolveParams(tol=1e-12), quantum=1e-12)
    runs = []
    ok = True
    for _ in range(starts):
        start = ConfigPoint([rng.uniform(0.2, 0.8, size=4)], UNIT_BOX)
        rep = find_critical(start, "min", tol=tol, max_iter=200, greens=cache)
        dist = float(np.linalg.norm(rep.final.xi[0] - np.asarray(CENTRE)))
        good = rep.reason == "Converged" and rep.grad_norm <= tol and dist <= 2 * mask.h
        ok &= good
        runs.append({"start": start.xi[0].tolist(), "final": rep.final.xi[0].tolist(), "reason": rep.reason,
                     "grad_norm": rep.grad_norm, "dist_to_centre": dist, "iterations": len(rep.trace) - 1})
    worst = max(r["dist_to_centre"] for r in runs)
    return CriterionResult(9, "critical point of phi_1", ok, {"grid": nodes, "two_h": 2 * mask.h, "runs": runs},
                           "max distance to centre %.2e (2h = %.4f), reasons %s"
                           % (worst, 2 * mask.h, sorted({r["reason"] for r in runs})))


# 10 / 11 --------------------------------------------------------------------------------

CONTINUATION_SCHEDULE = (0.5, 0.4, 0.3)
_continuation_cache = {}


def continuation_run(schedule=CONTINUATION_SCHEDULE):
    """m = 1, unit box, k = 1 continuation on eps-coupled grids (memoised per process)."""
    key = tuple(schedule)
    if key not in _continuation_cache:
        mu = math.exp(regular_part(CENTRE, unit_box_mask(33)).H_diag / 4.0)
        masks = [unit_box_mask(nodes_for_eps(e, mu, 1.0)) for e in schedule]
        cfg = ConfigPoint([CENTRE], UNIT_BOX)
        reports = continuation(cfg, schedule, 1.0, masks, tol=1e-9)
        _continuation_cache[key] = reports
    return _continuation_cache[key]


def criterion_10(seed=0, schedule=CONTINUATION_SCHEDULE, eps_ansatz=0.05):
    reports = continuation_run(schedule)
    accepted = [r for r in reports if not r.branch_jump]
    eps = [r.eps for r in accepted]
    masses = [r.mass for r in accepted]
    increasing = all(b > a for a, b in zip(masses, masses[1:])) and len(masses) >= 2
    extrap = richardson(eps, masses, order=2) if len(masses) >= 2 else float("nan")
    extrap_rel = abs(extrap / MASS_UNIT - 1.0)
    mask = unit_box_mask(25)
    b = build_ansatz(ConfigPoint([CENTRE], UNIT_BOX), eps_ansatz, GreensCache(mask), 1.0, mask, require_resolved=False)
    m_ans = hybrid_mass(b)
    ans_rel = abs(m_ans / MASS_UNIT - 1.0)
    ok = increasing and extrap_rel <= 0.05 and ans_rel <= 0.10
    measured = {"schedule": list(schedule), "grids": [r.grid_nodes for r in reports],
                "masses_over_64pi2": [r.mass / MASS_UNIT for r in reports],
                "grid_masses_over_64pi2": [r.mass_grid / MASS_UNIT for r in reports],
                "branch_jump": [r.branch_jump for r in reports], "monotone_increasing": increasing,
                "richardson_over_64pi2": extrap / MASS_UNIT, "richardson_rel_err": extrap_rel,
                "ansatz_mass_over_64pi2": m_ans / MASS_UNIT, "ansatz_rel_err": ans_rel}
    detail = "masses/64pi^2 %s (increasing: %s), Richardson %.4f, ansatz at eps=%g %.4f" % (
        ", ".join("%.5f" % m for m in measured["masses_over_64pi2"]), increasing, extrap / MASS_UNIT,
        eps_ansatz, m_ans / MASS_UNIT)
    return CriterionResult(10, "mass quantization trend", ok, measured, detail)


def criterion_11(seed=0, schedule=CONTINUATION_SCHEDULE):
    reports = continuation_run(schedule)
    accepted = [r for r in reports if not r.branch_jump]
    ratios = [r.correction_ratio for r in accepted]
    drift = max(ratios) / min(ratios) if len(ratios) >= 2 else float("nan")
    ok = len(ratios) >= 2 and drift <= 2.0
    measured = {"eps": [r.eps for r in reports], "correction_sup": [r.correction_sup for r in reports],
                "ratios": [r.correction_ratio for r in reports], "branch_jump": [r.branch_jump for r in reports],
                "drift": drift}
    return CriterionResult(11, "correction bound trend", ok, measured,
                           "accepted ratios %s, drift %.3f" % (", ".join("%.3f" % r for r in ratios), drift))


# 12 -------------------------------------------------------------------------------------

def criterion_12(seed=0, mu=None):
    if mu is None:
        mu = math.exp(regular_part(CENTRE, unit_box_mask(17)).H_diag / 4.0)
    samples = kernel_samples(mu, mu, 10.0)
    steps = (mu / 8.0, mu / 16.0, mu / 32.0)
    table = {}
    ok = True
    for i in range(5):
        res = [kernel_residual(i, mu, h, samples) for h in steps]
        ratios = [res[0] / res[1], res[1] / res[2]]
        ok &= all(3.2 <= r <= 4.8 for r in ratios)
        table[str(i)] = {"residuals": res, "ratios": ratios}
    worst = min(min(v["ratios"]) for v in table.values())
    best = max(max(v["ratios"]) for v in table.values())
    return CriterionResult(12, "kernel annihilation", ok, {"mu": mu, "h": list(steps), "table": table},
                           "ratios in [%.3f, %.3f]" % (worst, best))


# 13 -------------------------------------------------------------------------------------

REFERENCE_TABLE = [
    ("1", (0, 0, 0, 0), 1.0),
    ("2^3^2", (0, 0, 0, 0), 512.0),
    ("1 - 2 - 3", (0, 0, 0, 0), -4.0),
    ("2 * 3 + 4", (0, 0, 0, 0), 10.0),
    ("2 * (3 + 4)", (0, 0, 0, 0), 14.0),
    ("8 / 4 / 2", (0, 0, 0, 0), 1.0),
    ("-2^2", (0, 0, 0, 0), -4.0),
    ("(-2)^2", (0, 0, 0, 0), 4.0),
    ("2^-1", (0, 0, 0, 0), 0.5),
    ("x1 + 2*x2 + 3*x3 + 4*x4", (1, 2, 3, 4), 30.0),
    ("x1*x2 - x3/x4", (0.5, 4, 3, 2), 0.5),
    ("exp(0)", (0, 0, 0, 0), 1.0),
    ("log(x1)", (1, 0, 0, 0), 0.0),
    ("sqrt(x1^2 + x2^2)", (3, 4, 0, 0), 5.0),
    ("r", (3, 4, 0, 0), 5.0),
    ("exp(-r^2)", (1, 0, 0, 0), math.exp(-1.0)),
    ("sin(x1)^2 + cos(x1)^2", (0.3, 0, 0, 0), 1.0),
    ("1 + 0.5*x1", (0.25, 0, 0, 0), 1.125),
    ("2.5e-1 * 4", (0, 0, 0, 0), 1.0),
    ("log(exp(x2)) - x2 + 7", (0, 0.75, 0, 0), 7.0),
]

_FUZZ_ALPHABET = ["x1", "x2", "x3", "x4", "r", "exp", "log", "sqrt", "sin", "cos", "foo", "(", ")", "+", "-",
                  "*", "/", "^", "1", "0", "2.5", "1e308", "1e-3", ".", "e", " ", "$", ",", "9e999", "3"]


def fuzz_parser(n, seed=0):
    """Count outcomes of ``n`` random token strings; any non-structured exception is a crash."""
    rng = np.random.default_rng(seed)
    counts = {"value": 0, "error": 0, "crash": 0}
    crashes = []
    point = np.array([0.3, -0.7, 1.1, 0.0])
    for _ in range(n):
        size = int(rng.integers(1, 12))
        src = "".join(_FUZZ_ALPHABET[i] for i in rng.integers(0, len(_FUZZ_ALPHABET), size=size))
        try:
            evaluate(parse(src, centre=[0.0] * 4), point)
            counts["value"] += 1
        except KExprError:
            counts["error"] += 1
        except Exception as exc:  # noqa: BLE001 - a crash is exactly what is being counted
            counts["crash"] += 1
            if len(crashes) < 5:
                crashes.append("%r: %s" % (src, type(exc).__name__))
    return counts, crashes


def criterion_13(seed=0, n_fuzz=100_000):
    worst = 0.0
    table = []
    for src, x, want in REFERENCE_TABLE:
        got = evaluate(parse(src, centre=[0.0] * 4), np.asarray(x, dtype=float))
        err = abs(got - want) / max(1.0, abs(want))
        worst = max(worst, err)
        table.append({"expr": src, "value": got, "expected": want})
    counts, crashes = fuzz_parser(n_fuzz, seed + 13)
    ok = worst <= 1e-12 and counts["crash"] == 0
    return CriterionResult(13, "parser robustness", ok,
                           {"reference_max_rel_err": worst, "fuzz": counts, "crashes": crashes, "table": table},
                           "table max rel err %.1e; fuzz %d values, %d errors, %d crashes"
                           % (worst, counts["value"], counts["error"], counts["crash"]))


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11,
            12: criterion_12, 13: criterion_13}


def run_criteria(ids=None, seed=0, echo=None):
    """Run the selected criteria (default: 1-13; 14 is a property of this runner and lives in the CLI)."""
    ids = sorted(CRITERIA) if ids is None else [int(i) for i in ids]
    results = []
    for i in ids:
        if i not in CRITERIA:
            raise ValueError("unknown criterion %r" % (i,))
        t = time.perf_counter()
        res = CRITERIA[i](seed)
        res.seconds = time.perf_counter() - t
        results.append(res)
        log.info(res.line())
        if echo is not None:
            echo(res.line())
    return results
