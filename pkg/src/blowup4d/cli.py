"""Command-line front end: ``blowup4d <subcommand> --config <path> [--out DIR] [--threads N] [--seed S]``.

Every subcommand writes its files atomically into the output directory.  CSV
files open with a ``#`` comment block (tool version, config hash, grid, eps)
followed by a mandatory header row; JSON files carry the same block under
``"header"``.  Wall time goes to a separate ``timing.json`` so that the other
outputs are byte-identical across runs with the same config and seed.

Exit codes: 0 success, 1 acceptance failure, 2 input error, 3 numerical failure.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from itertools import product

import numpy as np

from . import __version__
from .ansatz import (EXPANSION_CONSTANT, EXPANSION_CONSTANT_CORRECTED, ansatz_energy, build_ansatz,
                     energy_expansion_reference, hybrid_mass, residual)
from .biharmonic import greens_value, regular_part
from .config import canonical_json, load_config
from .errors import (Blowup4DError, CoincidentPoints, CollidingPoints, ConfigError, CoreUnderResolved,
                     DomainSpecError, DuplicatePoints, EpsOutOfRange, KExprError, NotAdmissible, PointOnWall,
                     SourceTooCloseToBoundary, StageFailed)
from .grid import interpolate
from .reduced_energy import ConfigPoint, GreensCache, check_admissible, find_critical, phi_m
from .solver import continuation, nodes_for_eps, richardson

log = logging.getLogger("blowup4d")

EXIT_OK, EXIT_CRITERION, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
INPUT_ERRORS = (ConfigError, DomainSpecError, SourceTooCloseToBoundary, NotAdmissible, KExprError, EpsOutOfRange,
                CoincidentPoints, DuplicatePoints, PointOnWall, CoreUnderResolved, ValueError)
MASS_UNIT = 64.0 * math.pi ** 2
DETERMINISM_SUBSET = (1, 2, 12, 13)


# --- output helpers ----------------------------------------------------------------------

def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError("not JSON serialisable: %r" % type(obj))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


class Output:
    """Output directory with a shared header block."""

    def __init__(self, directory, cfg, command, grid=None, eps=None):
        self.dir = directory
        self.header = {"tool": "blowup4d", "version": __version__, "command": command, "config_hash": cfg.hash,
                       "seed": cfg.seed, "grid": grid, "eps": eps}
        self.files = []

    def path(self, name):
        return os.path.join(self.dir, name)

    def write_json(self, name, payload):
        body = {"header": self.header}
        body.update(payload)
        atomic_write(self.path(name), json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")
        self.files.append(name)

    def write_csv(self, name, columns, rows):
        buf = io.StringIO()
        for key in ("tool", "version", "command", "config_hash", "seed", "grid", "eps"):
            buf.write("# %s: %s\r\n" % (key, json.dumps(self.header[key], default=_json_default)))
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        atomic_write(self.path(name), buf.getvalue())
        self.files.append(name)

    def write_timing(self, seconds):
        atomic_write(self.path("timing.json"),
                     json.dumps({"command": self.header["command"], "wall_time_s": seconds}, indent=2) + "\n")


def _points_header(m):
    return ["xi%d_%d" % (j, a + 1) for j in range(m) for a in range(4)]


# --- subcommands -------------------------------------------------------------------------

def cmd_green(cfg, out, points=None):
    """Regular part at each point, the pairwise G matrix and axis slices of H through each point."""
    mask = cfg.mask()
    pts = np.asarray(points if points is not None else cfg.get("xi", [cfg.domain.center.tolist()]), dtype=float)
    params = cfg.linear_params
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        evs = list(pool.map(lambda p: regular_part(p, mask, params), pts))
    o = Output(out, cfg, "green", grid=list(mask.grid.shape))
    o.write_csv("green_points.csv", ["index", "x1", "x2", "x3", "x4", "H_diag"],
                [[i, *p.tolist(), ev.H_diag] for i, (p, ev) in enumerate(zip(pts, evs))])
    rows = []
    for i, ev in enumerate(evs):
        for j, p in enumerate(pts):
            g = -math.inf if i == j else greens_value(ev, p)
            rows.append([i, j, g])
    o.write_csv("green_matrix.csv", ["source", "target", "G"], rows)
    rows = []
    for i, (p, ev) in enumerate(zip(pts, evs)):
        for a in range(4):
            line = np.repeat(p[None, :], mask.grid.n[a], axis=0)
            line[:, a] = mask.grid.coords(a)
            inside = np.asarray(mask.spec.boundary_distance(line)) >= 0
            vals = np.where(inside, ev.H_at(line), np.nan)
            rows.extend([i, a + 1, float(c), float(v)] for c, v in zip(line[:, a], vals))
    o.write_csv("h_slices.csv", ["point", "axis", "coordinate", "H"], rows)
    o.write_json("green.json", {"points": pts, "H_diag": [ev.H_diag for ev in evs]})
    return o


def lattice_configs(cfg):
    """m = 1: lattice points.  m = 2: pairs ``(p, 2c - p)`` reflected through the domain centre."""
    lat = cfg.get("lattice")
    if lat is None:
        raise ConfigError("phi needs a 'lattice' section")
    n = lat["n"] if isinstance(lat["n"], list) else [lat["n"]] * 4
    axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(lat["lo"], lat["hi"], n)]
    pts = [np.array(p) for p in product(*axes)]
    if cfg.m == 1:
        return [p[None, :] for p in pts]
    if cfg.m == 2:
        c = cfg.domain.center
        return [np.stack([p, 2.0 * c - p]) for p in pts]
    raise ConfigError("phi lattices are defined for m = 1 or 2")


def cmd_phi(cfg, out):
    """phi_m on a lattice of configurations; collisions give -inf, points outside the domain nan."""
    mask = cfg.mask()
    cache = GreensCache(mask, cfg.linear_params)
    configs = lattice_configs(cfg)
    min_dist = 2.0 * mask.h

    def usable(xi):
        return np.all(np.asarray(cfg.domain.boundary_distance(xi)) >= min_dist)

    sources = {tuple(p) for xi in configs if usable(xi) for p in xi}
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        list(pool.map(cache.get, sorted(sources)))
    rows = []
    for idx, xi in enumerate(configs):
        point = ConfigPoint(xi, cfg.domain, cfg.delta0)
        admissible = bool(check_admissible(point))
        if point.m > 1 and point.min_separation() < mask.h / 2:
            value = -math.inf
        elif not usable(xi):
            value = math.nan
        else:
            try:
                value = phi_m(point, cache, cfg.k)
            except CollidingPoints:
                value = -math.inf
        rows.append([idx, *xi.ravel().tolist(), admissible, value])
    o = Output(out, cfg, "phi", grid=list(mask.grid.shape))
    o.write_csv("phi_landscape.csv", ["index", *_points_header(cfg.m), "admissible", "phi"], rows)
    return o


def start_configs(cfg):
    """Explicit starts, or ``random`` admissible starts drawn with the config seed."""
    spec = cfg.get("starts")
    if isinstance(spec, list):
        return [ConfigPoint(s, cfg.domain, cfg.delta0) for s in spec]
    count = spec["random"] if isinstance(spec, dict) else 1
    rng = np.random.default_rng(cfg.seed)
    lo, hi = np.asarray(cfg.domain.lo), np.asarray(cfg.domain.hi)
    starts = []
    for _ in range(10000 * count):
        xi = rng.uniform(lo, hi, size=(cfg.m, 4))
        point = ConfigPoint(xi, cfg.domain, cfg.delta0)
        if check_admissible(point):
            starts.append(point)
            if len(starts) == count:
                return starts
    raise ConfigError("could not draw %d admissible starts; reduce m or delta0" % count)


def _search(cfg, mask, starts):
    if cfg.delta0 < mask.h:
        raise ConfigError("delta0 = %g < h = %g: the admissible set reaches closer to the boundary than the "
                          "2h source margin of this grid" % (cfg.delta0, mask.h))
    cache = GreensCache(mask, cfg.linear_params, quantum=1e-12)
    return [find_critical(s, cfg.get("mode", "min"), tol=cfg.gradient_tol, greens=cache, k=cfg.k) for s in starts]


def cmd_find_critical(cfg, out):
    """Minimise (or maximise) phi_m from the configured and random starts."""
    mask = cfg.mask()
    reports = _search(cfg, mask, start_configs(cfg))
    o = Output(out, cfg, "find-critical", grid=list(mask.grid.shape))
    o.write_json("critical.json", {"mode": cfg.get("mode", "min"), "reports": [r.to_dict() for r in reports]})
    rows = []
    for s, r in enumerate(reports):
        for t in r.trace:
            rows.append([s, t["iter"], *np.ravel(t["xi"]).tolist(), t["phi"], t["grad_norm"], t["step"]])
    o.write_csv("critical_trace.csv", ["start", "iter", *_points_header(cfg.m), "phi", "grad_norm", "step"], rows)
    return o


def _ansatz_points(cfg, mask):
    choice = cfg.get("ansatz", {}).get("xi", cfg.get("xi", "auto"))
    if choice != "auto":
        return np.asarray(choice, dtype=float), None
    reports = _search(cfg, mask, start_configs(cfg))
    best = [r for r in reports if r.reason == "Converged"] or reports
    best = min(best, key=lambda r: r.grad_norm)
    return best.final.xi, best


def cmd_ansatz(cfg, out):
    """Build the bubble ansatz at one eps and report its mass, energy and residual."""
    mask = cfg.mask()
    xi, search = _ansatz_points(cfg, mask)
    eps = float(cfg.get("ansatz", {}).get("eps", cfg.eps_schedule[-1]))
    point = ConfigPoint(xi, cfg.domain, cfg.delta0)
    cache = GreensCache(mask, cfg.linear_params)
    bundle = build_ansatz(point, eps, cache, cfg.k, mask, cfg.linear_params, require_resolved=False)
    _, star = residual(bundle)
    phi = phi_m(point, cache, cfg.k)
    J = ansatz_energy(bundle, hybrid=cfg.hybrid)
    payload = {
        "eps": eps, "rho": bundle.er.rho, "cfg": bundle.cfg.to_dict(), "phi": phi, "residual_star_norm": star,
        "aa6_sup": bundle.diagnostics["aa6"], "aa8_sup": bundle.diagnostics["aa8"],
        "diagnostics": bundle.diagnostics, "energy": J,
        "expansion_reference": energy_expansion_reference(point, eps, phi, EXPANSION_CONSTANT),
        "expansion_reference_corrected": energy_expansion_reference(point, eps, phi, EXPANSION_CONSTANT_CORRECTED),
        "mass": hybrid_mass(bundle) if cfg.hybrid else None, "hybrid": cfg.hybrid,
        "critical_search": None if search is None else search.to_dict(),
    }
    o = Output(out, cfg, "ansatz", grid=list(mask.grid.shape), eps=eps)
    o.write_json("ansatz.json", payload)
    line = np.repeat(bundle.xi[0][None, :], mask.grid.n[0], axis=0)
    line[:, 0] = mask.grid.coords(0)
    vals = interpolate(bundle.U, line)
    o.write_csv("ansatz_slice.csv", ["x1", "U"], [[float(a), float(b)] for a, b in zip(line[:, 0], vals)])
    return o


def cmd_solve(cfg, out):
    """Newton continuation along eps_schedule, with mass and correction trends per stage."""
    base = cfg.mask()
    xi = np.asarray(cfg.get("xi", [cfg.domain.center.tolist()] if cfg.m == 1 else None) or [], dtype=float)
    if xi.size == 0:
        xi, _ = _ansatz_points(cfg, base)
    point = ConfigPoint(xi, cfg.domain, cfg.delta0)
    nodes = cfg.stage_nodes()
    if nodes is None:
        mu = np.exp(np.array([regular_part(p, base, cfg.linear_params).H_diag for p in point.xi]) / 4.0)
        side = float(np.min(np.asarray(cfg.domain.hi) - np.asarray(cfg.domain.lo)))
        resolution = float(cfg.get("grid", {}).get("resolution", 4.0))
        nodes = [nodes_for_eps(e, float(mu.min()), side, resolution) for e in cfg.eps_schedule]
    masks = [cfg.mask(n) for n in nodes]
    o = Output(out, cfg, "solve", grid=nodes, eps=cfg.eps_schedule)
    try:
        reports = continuation(point, cfg.eps_schedule, cfg.k, masks, tol=cfg.newton_tol, params=cfg.linear_params,
                               hybrid=cfg.hybrid)
        failure = None
    except StageFailed as exc:
        reports, failure = exc.completed, exc
    rows, hist = [], []
    for s, r in enumerate(reports):
        rows.append([s, r.eps, r.rho, r.grid_nodes, r.converged, r.iterations, r.mass, r.mass / MASS_UNIT,
                     r.mass_grid, r.energy, r.correction_sup, r.correction_ratio, r.max_U, r.branch_jump])
        hist.extend([s, i, v] for i, v in enumerate(r.residuals))
    o.write_csv("trends.csv", ["stage", "eps", "rho", "grid_nodes", "converged", "iterations", "mass",
                               "mass_over_64pi2", "mass_grid", "energy", "correction_sup", "correction_ratio",
                               "max_U", "branch_jump"], rows)
    o.write_csv("newton_history.csv", ["stage", "iteration", "residual"], hist)
    accepted = [r for r in reports if not r.branch_jump]
    extrap = richardson([r.eps for r in accepted], [r.mass for r in accepted]) if len(accepted) >= 2 else None
    o.write_json("solve.json", {
        "reports": [dict(r.to_dict(), stage=s) for s, r in enumerate(reports)],
        "richardson_mass": extrap, "richardson_mass_over_64pi2": None if extrap is None else extrap / MASS_UNIT,
        "failed_stage": None if failure is None else {"index": failure.index, "cause": str(failure.cause),
                                                      "type": type(failure.cause).__name__},
    })
    if failure is not None:
        raise failure
    return o


def verify_summary(cfg, results):
    """Deterministic summary text: header plus one record per criterion, no timings."""
    body = {"header": {"tool": "blowup4d", "version": __version__, "command": "verify", "config_hash": cfg.hash,
                       "seed": cfg.seed, "grid": None, "eps": None},
            "passed": all(r.passed for r in results),
            "criteria": [r.to_dict() for r in results]}
    return json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n"


def determinism_check(seed, ids=DETERMINISM_SUBSET):
    """Run a fast subset of criteria twice and compare the serialised records byte for byte."""
    from .verify import CriterionResult, run_criteria

    first = canonical_json([r.to_dict() for r in run_criteria(ids, seed)])
    second = canonical_json([r.to_dict() for r in run_criteria(ids, seed)])
    same = first == second
    return CriterionResult(14, "determinism", same, {"subset": list(ids), "bytes": len(first), "identical": same},
                           "subset %s re-run %s" % (list(ids), "identical" if same else "DIFFERS"))


def cmd_verify(cfg, out, echo=None):
    """Run the acceptance criteria and write a deterministic summary."""
    from .verify import run_criteria

    ids = cfg.get("verify", {}).get("criteria", list(range(1, 15)))
    results = run_criteria([i for i in ids if i != 14], cfg.seed, echo=echo)
    if 14 in ids:
        res = determinism_check(cfg.seed)
        results.append(res)
        if echo is not None:
            echo(res.line())
    results.sort(key=lambda r: r.id)
    text = verify_summary(cfg, results)
    os.makedirs(out, exist_ok=True)
    atomic_write(os.path.join(out, "verify_summary.json"), text)
    atomic_write(os.path.join(out, "verify_timing.json"),
                 json.dumps({str(r.id): r.seconds for r in results}, indent=2, sort_keys=True) + "\n")
    return results


# --- entry point -------------------------------------------------------------------------

COMMANDS = {"green": cmd_green, "phi": cmd_phi, "find-critical": cmd_find_critical, "ansatz": cmd_ansatz,
            "solve": cmd_solve, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="blowup4d", description="Concentrating solutions of the 4D Navier problem "
                                "Lap^2 u = rho^4 k e^u: Green's functions, reduced energy, ansatz and Newton solves.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().splitlines()[0])
        sp.add_argument("--config", help="JSON config (default: the bundled default config)")
        sp.add_argument("--out", help="output directory (default: config 'out' or ./out-<command>)")
        sp.add_argument("--threads", type=int, help="worker pool size for independent Green solves")
        sp.add_argument("--seed", type=int, help="seed for randomized starts and property checks")
    return p


def _error_record(exc, stage):
    record = {"error": type(exc).__name__, "message": str(exc), "stage": stage}
    if isinstance(exc, StageFailed):
        record["failed_stage"] = exc.index
        record["cause"] = {"error": type(exc.cause).__name__, "message": str(exc.cause)}
    return record


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    stage = "config"
    out = None
    try:
        cfg = load_config(args.config, {"threads": args.threads, "seed": args.seed})
        out = args.out or cfg.get("out") or "out-%s" % args.command
        stage = args.command
        t0 = time.perf_counter()
        if args.command == "verify":
            results = cmd_verify(cfg, out, echo=print)
            print("summary: %s" % os.path.join(out, "verify_summary.json"))
            return EXIT_OK if all(r.passed for r in results) else EXIT_CRITERION
        o = COMMANDS[args.command](cfg, out)
        o.write_timing(time.perf_counter() - t0)
        for name in o.files:
            print(os.path.join(out, name))
        return EXIT_OK
    except INPUT_ERRORS as exc:
        code, error = EXIT_INPUT, exc
    except Blowup4DError as exc:
        code, error = EXIT_NUMERICAL, exc
    record = _error_record(error, stage)
    record["exit_code"] = code
    text = json.dumps(record, sort_keys=True, default=_json_default)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            atomic_write(os.path.join(out, "error.json"), text + "\n")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
