"""Run configuration: JSON schema, defaults and normalization.

A run file names an experiment ``kind`` and the dimensions ``d`` and ``n``;
every other key has a default.  :func:`normalize` fills defaults and
canonicalizes types, and applying it twice changes nothing.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

from .disorder import KINDS as DISORDER_KINDS
from .errors import ConfigError
from .solvers import SOLVERS

SCHEMA_VERSION = 1

EXPERIMENT_KINDS = (
    "identity-check",
    "solve",
    "greens",
    "exponents",
    "scaling",
    "limit-shape",
    "profile",
    "concentration",
    "shiftpi",
    "disorder-dump",
)

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "model": {"lam": 1.0, "L": 8, "direction": None},
    "disorder": {"kind": "white", "delta": 0.25, "intensity": 1.0, "amplitude": 1.0, "profile": "tent", "hurst": 0.5},
    "solver": {"name": "auto", "grid": None, "restarts": 3, "sweeps": 200},
    "statistics": {
        "sizes": None,
        "replicas": 30,
        "fit_floor": 0,
        "statistic": "center_e",
        "frozen": False,
        "instances": 100,
        "h_ladder": [],
        "x_ladder": [0.0, 0.5, 1.0],
        "eps": 0.99,
        "walkers": 10000,
        "trials": 100000,
        "thresholds": {},
    },
    "output": {"plots": True},
    "budget": {"node_seconds": None},
}


def default_sizes(kind: str, d: int) -> list[int]:
    """Size ladder used when a run file gives none (kept desk-scale per d)."""
    if kind == "shiftpi":
        return [16, 32, 64]
    if kind == "limit-shape":
        return [64, 128]
    if kind == "greens":
        return {1: [16, 32, 64, 128], 2: [8, 16, 32]}.get(d, [4, 8, 12])
    if d == 1:
        return [16, 32, 64, 128, 256]
    if d == 2:
        return [2, 4, 6, 8]
    return [2, 3, 4]


_TOP = {"schema_version", "kind", "d", "n", "seed", "model", "disorder", "solver", "statistics", "output", "budget"}
_THRESHOLDS = {"xi", "chi", "gap", "rel_tol", "stability", "fraction_floor", "var_slope", "grad_slope"}


@dataclass(frozen=True)
class RunConfig:
    """A validated, normalized run configuration (see :func:`normalize`)."""

    data: dict

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def d(self) -> int:
        return self.data["d"]

    @property
    def n(self) -> int:
        return self.data["n"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def block(self, name: str) -> dict:
        return self.data[name]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def with_seed(self, seed: int) -> "RunConfig":
        d = self.to_dict()
        d["seed"] = seed
        return RunConfig(normalize(d))


def _fail(key: str, msg: str):
    raise ConfigError(f"{key}: {msg}")


def _int(key, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (isinstance(v, float) and not v.is_integer()):
        _fail(key, f"expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        _fail(key, f"must be >= {lo}")
    return v


def _float(key, v, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(key, f"expected a finite number, got {v!r}")
    v = float(v)
    if positive and not v > 0:
        _fail(key, "must be positive")
    return v


def _bool(key, v):
    if not isinstance(v, bool):
        _fail(key, f"expected true or false, got {v!r}")
    return v


def _block(raw: dict, name: str) -> dict:
    given = raw.get(name, {})
    if given is None:
        given = {}
    if not isinstance(given, dict):
        _fail(name, "expected an object")
    allowed = set(DEFAULTS[name])
    for k in given:
        if k not in allowed:
            _fail(f"{name}.{k}", "unknown key")
    out = copy.deepcopy(DEFAULTS[name])
    out.update(given)
    return out


def normalize(raw: dict) -> dict:
    """Validate ``raw`` and return the canonical config with defaults filled."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for k in raw:
        if k not in _TOP:
            _fail(k, "unknown key")
    for k in ("kind", "d", "n"):
        if k not in raw:
            _fail(k, "required key missing")
    ver = raw.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        _fail("schema_version", f"unsupported version {ver!r} (expected {SCHEMA_VERSION})")
    kind = raw["kind"]
    if kind not in EXPERIMENT_KINDS:
        _fail("kind", f"unknown experiment kind {kind!r}")
    out = {"schema_version": SCHEMA_VERSION, "kind": kind, "d": _int("d", raw["d"], 1), "n": _int("n", raw["n"], 1)}
    out["seed"] = _int("seed", raw.get("seed", 0), 0)

    m = _block(raw, "model")
    m["lam"] = _float("model.lam", m["lam"], positive=True)
    m["L"] = _int("model.L", m["L"], 1)
    if m["direction"] is not None:
        e = m["direction"]
        if not isinstance(e, list) or len(e) != out["n"]:
            _fail("model.direction", "expected a list of n numbers")
        e = [_float("model.direction", x) for x in e]
        if abs(math.sqrt(sum(x * x for x in e)) - 1.0) > 1e-12:
            _fail("model.direction", "must be a unit vector")
        m["direction"] = e
    out["model"] = m

    dis = _block(raw, "disorder")
    if dis["kind"] not in DISORDER_KINDS:
        _fail("disorder.kind", f"unknown disorder {dis['kind']!r}")
    dis["delta"] = _float("disorder.delta", dis["delta"], positive=True)
    dis["intensity"] = _float("disorder.intensity", dis["intensity"], positive=True)
    dis["amplitude"] = _float("disorder.amplitude", dis["amplitude"])
    dis["hurst"] = _float("disorder.hurst", dis["hurst"], positive=True)
    if dis["profile"] not in ("tent", "biweight"):
        _fail("disorder.profile", f"unknown bump profile {dis['profile']!r}")
    out["disorder"] = dis

    s = _block(raw, "solver")
    if s["name"] not in SOLVERS:
        _fail("solver.name", f"unknown solver {s['name']!r}")
    if s["grid"] is not None:
        g = s["grid"]
        if not isinstance(g, dict) or set(g) != {"W", "step"}:
            _fail("solver.grid", "expected {W, step} or null")
        s["grid"] = {"W": _float("solver.grid.W", g["W"], True), "step": _float("solver.grid.step", g["step"], True)}
    s["restarts"] = _int("solver.restarts", s["restarts"], 1)
    s["sweeps"] = _int("solver.sweeps", s["sweeps"], 1)
    out["solver"] = s

    st = _block(raw, "statistics")
    if st["sizes"] is None:
        st["sizes"] = default_sizes(kind, out["d"])
    sizes = st["sizes"]
    if not isinstance(sizes, list) or not sizes:
        _fail("statistics.sizes", "expected a non-empty list")
    sizes = [_int("statistics.sizes", L, 1) for L in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        _fail("statistics.sizes", "must be strictly increasing")
    st["sizes"] = sizes
    st["replicas"] = _int("statistics.replicas", st["replicas"], 1)
    st["fit_floor"] = _int("statistics.fit_floor", st["fit_floor"], 0)
    if st["statistic"] not in ("center_e", "center_norm"):
        _fail("statistics.statistic", "expected center_e or center_norm")
    st["frozen"] = _bool("statistics.frozen", st["frozen"])
    st["instances"] = _int("statistics.instances", st["instances"], 1)
    st["walkers"] = _int("statistics.walkers", st["walkers"], 100)
    st["trials"] = _int("statistics.trials", st["trials"], 1)
    for key in ("h_ladder", "x_ladder"):
        if not isinstance(st[key], list):
            _fail(f"statistics.{key}", "expected a list")
        st[key] = [_float(f"statistics.{key}", x) for x in st[key]]
    st["eps"] = _float("statistics.eps", st["eps"], positive=True)
    if not st["eps"] < 1:
        _fail("statistics.eps", "must lie in (0, 1)")
    th = st["thresholds"]
    if not isinstance(th, dict):
        _fail("statistics.thresholds", "expected an object")
    clean = {}
    for k, v in th.items():
        if k not in _THRESHOLDS:
            _fail(f"statistics.thresholds.{k}", "unknown key")
        if isinstance(v, list):
            if len(v) != 2:
                _fail(f"statistics.thresholds.{k}", "expected [low, high]")
            clean[k] = [_float(f"statistics.thresholds.{k}", x) for x in v]
        else:
            clean[k] = _float(f"statistics.thresholds.{k}", v)
    st["thresholds"] = dict(sorted(clean.items()))
    out["statistics"] = st

    o = _block(raw, "output")
    o["plots"] = _bool("output.plots", o["plots"])
    out["output"] = o

    b = _block(raw, "budget")
    if b["node_seconds"] is not None:
        b["node_seconds"] = _float("budget.node_seconds", b["node_seconds"])
        if b["node_seconds"] < 0:
            _fail("budget.node_seconds", "must be >= 0")
    out["budget"] = b
    return out


def parse_config_text(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return RunConfig(normalize(raw))


def parse_config(path) -> RunConfig:
    """Read, validate and normalize a JSON run file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def disorder_spec(cfg: RunConfig) -> dict:
    """The disorder block in the form :func:`msre.disorder.make_field` takes."""
    dis = cfg.block("disorder")
    return {
        "kind": dis["kind"],
        "delta": dis["delta"],
        "intensity": dis["intensity"],
        "amplitude": dis["amplitude"],
        "hurst": dis["hurst"],
        "bump": {"profile": dis["profile"]},
    }
