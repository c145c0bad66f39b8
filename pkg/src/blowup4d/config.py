"""Run configuration: JSON schema, defaults, loading and hashing."""

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from .errors import ConfigError, KExprError
from .grid import Box, BoxWithHole, Grid4, build_domain
from .kexpr import parse
from .poisson import LinearSolveParams

_VEC4 = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}
_POINTS = {"type": "array", "items": _VEC4, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "blowup4d run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "grid", "k", "m", "delta0", "eps_schedule", "tol"],
    "properties": {
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "lo", "hi"],
            "properties": {
                "type": {"enum": ["box", "box_with_hole"]},
                "lo": _VEC4, "hi": _VEC4, "hole_lo": _VEC4, "hole_hi": _VEC4,
            },
            "if": {"properties": {"type": {"const": "box_with_hole"}}},
            "then": {"required": ["hole_lo", "hole_hi"]},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n"],
            "properties": {
                "n": {"oneOf": [
                    {"type": "integer", "minimum": 5},
                    {"type": "array", "items": {"type": "integer", "minimum": 5}, "minItems": 1},
                    {"const": "auto"},
                ]},
                "resolution": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "k": {"type": "string", "minLength": 1},
        "m": {"type": "integer", "minimum": 1},
        "delta0": {"type": "number", "exclusiveMinimum": 0},
        "eps_schedule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                         "minItems": 1},
        "tol": {
            "type": "object",
            "additionalProperties": False,
            "required": ["linear", "newton"],
            "properties": {
                "linear": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-2},
                "newton": {"type": "number", "exclusiveMinimum": 0},
                "gradient": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "quadrature": {"type": "object", "additionalProperties": False,
                       "properties": {"hybrid": {"type": "boolean"}}},
        "xi": _POINTS,
        "starts": {"oneOf": [
            {"type": "array", "items": _POINTS, "minItems": 1},
            {"type": "object", "additionalProperties": False, "required": ["random"],
             "properties": {"random": {"type": "integer", "minimum": 1}}},
        ]},
        "mode": {"enum": ["min", "max"]},
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lo", "hi", "n"],
            "properties": {
                "lo": _VEC4, "hi": _VEC4,
                "n": {"oneOf": [{"type": "integer", "minimum": 1},
                                {"type": "array", "items": {"type": "integer", "minimum": 1},
                                 "minItems": 4, "maxItems": 4}]},
            },
        },
        "ansatz": {"type": "object", "additionalProperties": False,
                   "properties": {"eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                                  "xi": {"oneOf": [{"const": "auto"}, _POINTS]}}},
        "verify": {"type": "object", "additionalProperties": False,
                   "properties": {"criteria": {"type": "array",
                                               "items": {"type": "integer", "minimum": 1, "maximum": 14}}}},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
    },
}


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError("not JSON serialisable: %r" % type(obj))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True, default=_plain)


def config_hash(raw):
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def default_config():
    """The bundled default configuration as a dict."""
    text = resources.files("blowup4d").joinpath("data/default_config.json").read_text()
    return json.loads(text)


@dataclass
class RunConfig:
    raw: dict

    def __post_init__(self):
        self.raw = copy.deepcopy(self.raw)
        validate(self.raw)
        d = self.raw["domain"]
        try:
            if d["type"] == "box":
                self.domain = Box(d["lo"], d["hi"])
            else:
                self.domain = BoxWithHole(d["lo"], d["hi"], d["hole_lo"], d["hole_hi"])
        except Exception as exc:
            raise ConfigError("invalid domain: %s" % exc) from exc
        try:
            self.k = parse(self.raw["k"], centre=self.domain.center)
        except KExprError as exc:
            raise ConfigError("k expression: %s" % exc) from exc
        eps = self.raw["eps_schedule"]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_schedule must be strictly decreasing")
        n = self.raw["grid"]["n"]
        if isinstance(n, list) and len(n) not in (1, len(eps)):
            raise ConfigError("grid.n list needs one entry per eps stage")
        if "xi" in self.raw and len(self.raw["xi"]) != self.raw["m"]:
            raise ConfigError("xi lists %d points but m = %d" % (len(self.raw["xi"]), self.raw["m"]))

    @property
    def hash(self):
        return config_hash(self.raw)

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def seed(self):
        return int(self.raw.get("seed", 0))

    @property
    def threads(self):
        return int(self.raw.get("threads", 1))

    @property
    def m(self):
        return int(self.raw["m"])

    @property
    def delta0(self):
        return float(self.raw["delta0"])

    @property
    def eps_schedule(self):
        return [float(e) for e in self.raw["eps_schedule"]]

    @property
    def hybrid(self):
        return bool(self.raw.get("quadrature", {}).get("hybrid", True))

    @property
    def linear_params(self):
        return LinearSolveParams(tol=float(self.raw["tol"]["linear"]))

    @property
    def newton_tol(self):
        return float(self.raw["tol"]["newton"])

    @property
    def gradient_tol(self):
        return float(self.raw["tol"].get("gradient", 1e-3))

    def base_nodes(self):
        """Node count for single-grid commands: the int, or the first list entry, or 17 for "auto"."""
        n = self.raw["grid"]["n"]
        if isinstance(n, list):
            return int(n[0])
        return 17 if n == "auto" else int(n)

    def stage_nodes(self):
        """Per-stage node counts, or None when they come from the resolution rule."""
        n = self.raw["grid"]["n"]
        if n == "auto":
            return None
        if isinstance(n, int):
            return [n] * len(self.eps_schedule)
        return list(n) * len(self.eps_schedule) if len(n) == 1 else list(n)

    def mask(self, nodes=None):
        nodes = self.base_nodes() if nodes is None else int(nodes)
        grid = Grid4.for_box(self.domain.lo, self.domain.hi, nodes)
        return build_domain(self.domain, grid)


def validate(raw):
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError("config %s: %s" % (where, exc.message)) from exc


def load_config(path=None, overrides=None):
    """Read and validate a config file (``None`` means the bundled default)."""
    if path is None:
        raw = default_config()
    else:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config %s is not valid JSON: %s" % (path, exc)) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return RunConfig(raw)
