"""Command-line entry point: ``msre <subcommand> --config run.json``.

Every run writes into ``--out-dir`` only: ``report.json`` (normalized config
echo, assertions and a manifest of content hashes), a CSV of per-size
statistics, an optional gnuplot script and ``timing.json`` (wall clock,
kept out of the report so reports are reproducible byte for byte).

Exit codes: 0 all assertions pass, 1 usage or config error, 2 an assertion
failed, 3 infeasible problem or unmet precondition, 4 budget refusal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__, experiments as ex, greens, rng
from .config import EXPERIMENT_KINDS, RunConfig, disorder_spec, parse_config
from .disorder import make_field
from .errors import (
    BudgetError,
    ConfigError,
    FitError,
    InfeasibleError,
    ParameterError,
    PreconditionError,
    SolverError,
    UnsupportedError,
)
from .lattice import BoxDomain
from .solvers import EnergyModel, HeightGrid, energy, site_energies, solve

log = logging.getLogger("msre")

EXIT_OK, EXIT_USAGE, EXIT_ASSERT, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


# serialization --------------------------------------------------------------------


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def assertion(name: str, value, threshold, passed: bool) -> dict:
    return {"name": name, "value": value, "threshold": threshold, "pass": bool(passed)}


class Outputs:
    """Writes files under one directory and records their hashes."""

    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        self.files: dict[str, str] = {}

    def path(self, name: str) -> str:
        p = os.path.abspath(os.path.join(self.root, name))
        if os.path.commonpath([p, self.root]) != self.root:
            raise UsageError(f"refusing to write outside the output directory: {name}")
        return p

    def write(self, name: str, data, record: bool = True):
        raw = data.encode() if isinstance(data, str) else data
        os.makedirs(self.root, exist_ok=True)
        with open(self.path(name), "wb") as fh:
            fh.write(raw)
        if record:
            self.files[name] = hashlib.sha256(raw).hexdigest()

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        self.write(name, buf.getvalue())


def plot_script(csv_name: str, columns: list[str], title: str, logscale: bool = True) -> str:
    lines = [
        "set datafile separator ','",
        f"set title '{title}'",
        f"set xlabel '{columns[0]}'",
    ]
    if logscale:
        lines.append("set logscale xy")
    plots = [f"'{csv_name}' using 1:{i + 1} with linespoints title '{c}'" for i, c in enumerate(columns) if i]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


# config translation -------------------------------------------------------------


def experiment_config(cfg: RunConfig, threads: int = 1) -> ex.ExperimentConfig:
    m, s, st = cfg.block("model"), cfg.block("solver"), cfg.block("statistics")
    opts = {}
    if s["name"] == "local":
        opts = {"restarts": s["restarts"], "sweeps": s["sweeps"]}
    return ex.ExperimentConfig(
        d=cfg.d,
        n=cfg.n,
        disorder=disorder_spec(cfg),
        lam=m["lam"],
        direction=m["direction"],
        sizes=tuple(st["sizes"]),
        replicas=st["replicas"],
        seed=cfg.seed,
        solver=s["name"],
        grid=s["grid"],
        solver_options=opts,
        frozen=st["frozen"],
        fit_floor=st["fit_floor"],
        threads=threads,
    )


def estimate_cost(cfg: RunConfig) -> float:
    """Node-seconds estimate used for budget refusal."""
    kind = cfg.kind
    st = cfg.block("statistics")
    if kind in ("exponents", "scaling", "profile", "concentration"):
        return ex.estimate_cost(experiment_config(cfg))
    if kind == "limit-shape":
        sub = experiment_config(cfg)
        sub.sizes = tuple(sub.sizes[-2:])
        return ex.estimate_cost(sub) * len(st["x_ladder"]) * 2
    if kind == "solve":
        sub = experiment_config(cfg)
        sub.sizes = (cfg.block("model")["L"],)
        sub.replicas = 1
        return ex.estimate_cost(sub)
    if kind == "greens":
        return sum(L**cfg.d for L in st["sizes"]) * 1e-5 + st["instances"] * st["walkers"] * 1e-6
    if kind == "identity-check":
        return st["instances"] * 1e-3
    return 1e-3


# subcommands ----------------------------------------------------------------------


def run_identity_check(cfg: RunConfig, out: Outputs, threads: int):
    st, m = cfg.block("statistics"), cfg.block("model")
    N = st["instances"]
    L = min(m["L"], 4)
    res = [ex.main_identity_instance(cfg.seed, i, cfg.d, cfg.n, m["lam"], L) for i in range(N)]
    rows = [(i, r) for i, r in enumerate(res)]
    asserts = [assertion("main_identity_relative_residual", max(res), 1e-9, max(res) <= 1e-9)]
    if cfg.block("disorder")["kind"] == "linear":
        reps = [ex.linear_shift_instance(cfg.seed, i, cfg.d, cfg.n, m["lam"], L) for i in range(N)]
        worst = max(max(r.surface_residual, r.energy_residual) for r in reps)
        asserts.append(assertion("boundary_shift_linear_residual", worst, 1e-9, worst <= 1e-9))
    elif cfg.d == 1 and cfg.n == 1 and cfg.block("disorder")["kind"] == "white":
        reps = [ex.aligned_d1_shift_instance(cfg.seed, i, m["lam"], max(m["L"], 2)) for i in range(N)]
        worst = max(max(r.surface_residual, r.energy_residual) for r in reps)
        asserts.append(assertion("boundary_shift_dp_residual", worst, 1e-9, worst <= 1e-9))
    out.csv("stats.csv", ["instance", "relative_residual"], rows)
    return asserts, {"instances": N, "L": L}, None


def _model(cfg: RunConfig, L: int) -> EnergyModel:
    dom = BoxDomain.cube(L, cfg.d)
    return EnergyModel(dom, make_field(disorder_spec(cfg), cfg.seed, cfg.d, cfg.n), cfg.block("model")["lam"])


def run_solve(cfg: RunConfig, out: Outputs, threads: int):
    s = cfg.block("solver")
    model = _model(cfg, cfg.block("model")["L"])
    grid = HeightGrid.symmetric(s["grid"]["W"], s["grid"]["step"], cfg.n) if s["grid"] else None
    opts = {"restarts": s["restarts"], "sweeps": s["sweeps"]} if s["name"] == "local" else {}
    gs = solve(model, s["name"], grid, **opts)
    recheck = energy(model, gs.surface)
    gap = abs(recheck - gs.energy) / (1.0 + abs(gs.energy))
    asserts = [assertion("energy_recomputed", gap, 1e-9, gap <= 1e-9)]
    if gs.stats.get("window_saturated"):
        asserts.append(assertion("window_not_saturated", True, False, False))
    verts = model.domain.vertices()
    inter = gs.surface.interior
    rv = model.domain.boundary_distances()
    site = site_energies(model, gs.surface)
    header = [f"v{i}" for i in range(cfg.d)] + ["r_v"] + [f"phi{j}" for j in range(cfg.n)] + ["site_energy"]
    rows = [list(map(int, v)) + [int(r)] + list(map(float, p)) + [float(e)] for v, r, p, e in zip(verts, rv, inter, site)]
    out.csv("surface.csv", header, rows)
    out.write("surface.bin", gs.surface.to_bytes())
    record = gs.record()
    record["seed"] = cfg.seed
    return asserts, record, None


def run_greens(cfg: RunConfig, out: Outputs, threads: int):
    st = cfg.block("statistics")
    reports = greens.check_green_bounds(cfg.d, st["sizes"], seed=cfg.seed)
    asserts = []
    rows = []
    for rep in reports:
        asserts.append(assertion(f"bound {rep.bound_name}", max(rep.empirical_sup), rep.threshold or "stable x1.5",
                                 rep.passed))
        for L, v in zip(rep.sizes, rep.empirical_sup):
            rows.append((rep.bound_name, L, v))
    gamblers = [greens.gambler_ruin_check(n, m, st["trials"], rng.substream(cfg.seed, rng.GAMBLER, n, m))
                for n, m in ((5, 5), (1, 9), (3, 7))]
    for g in gamblers:
        asserts.append(assertion(f"gambler_ruin n={g['n']} m={g['m']}", g["gap"], 3 * g["stderr"], g["pass"]))
    L_mc = min(st["sizes"][0], 8)
    mc = greens.green_mc_agreement(cfg.d, L_mc, min(st["instances"], 20), st["walkers"], cfg.seed)
    asserts.append(assertion("green_exact_vs_mc_max_z", mc["max_z"], 3.0, mc["pass"]))
    out.csv("stats.csv", ["bound", "L", "empirical_sup"], rows)
    details = {"bounds": [r.as_dict() for r in reports], "gambler_ruin": gamblers, "mc_agreement": mc}
    return asserts, details, None


def _size_rows(results, stat):
    groups = ex._by_size(results)
    rows = []
    for L, rs in groups.items():
        c = np.array([getattr(r, stat) for r in rs])
        ge = np.array([r.ge for r in rs])
        sd, sd_se = ex.jackknife_std(ge) if len(ge) > 2 else (float("nan"), float("nan"))
        rows.append((L, float(c.mean()), float(c.std(ddof=1) / math.sqrt(len(c))) if len(c) > 1 else 0.0,
                     float(ge.mean()), sd, sd_se))
    return rows


_SIZE_HEADER = ["L", "mean_center", "stderr_center", "mean_ge", "std_ge", "stderr_std_ge"]


def _range_assert(name, value, rng_):
    return assertion(name, value, rng_, rng_[0] <= value <= rng_[1])


def _fits(cfg, results):
    st = cfg.block("statistics")
    meta = experiment_config(cfg).meta()
    xi = ex.estimate_transversal(results, st["statistic"], st["fit_floor"], min_replicas=30, meta=meta)
    chi = ex.estimate_energy_fluct(results, st["fit_floor"], min_replicas=30, meta=meta)
    return xi, chi


def _run(cfg, threads):
    st = cfg.block("statistics")
    if len(st["sizes"]) < 2 and cfg.kind in ("exponents", "scaling", "concentration"):
        raise PreconditionError("a fit needs at least two sizes")
    return ex.run_replicas(experiment_config(cfg, threads))


def _emit_sizes(cfg, out, results, title):
    out.csv("stats.csv", _SIZE_HEADER, _size_rows(results, cfg.block("statistics")["statistic"]))
    if cfg.block("output")["plots"]:
        out.write("plot.gp", plot_script("stats.csv", ["L", "mean_center", "stderr_center", "mean_ge", "std_ge"], title))


def run_exponents(cfg: RunConfig, out: Outputs, threads: int):
    results = _run(cfg, threads)
    xi, chi = _fits(cfg, results)
    th = cfg.block("statistics")["thresholds"]
    asserts = [
        assertion("xi_finite", xi.slope, "finite", math.isfinite(xi.slope)),
        assertion("chi_finite", chi.slope, "finite", math.isfinite(chi.slope)),
    ]
    if "xi" in th:
        asserts.append(_range_assert("xi_in_window", xi.slope, th["xi"]))
    if "chi" in th:
        asserts.append(_range_assert("chi_in_window", chi.slope, th["chi"]))
    _emit_sizes(cfg, out, results, "transversal and energy fluctuations")
    return asserts, {"xi": xi.as_dict(), "chi": chi.as_dict()}, None


def run_scaling(cfg: RunConfig, out: Outputs, threads: int):
    results = _run(cfg, threads)
    xi, chi = _fits(cfg, results)
    rep = ex.check_scaling_relation(xi, chi, cfg.d)
    th = cfg.block("statistics")["thresholds"]
    thr = max(th.get("gap", ex.TOL_GAP), 3 * rep["stderr"])
    asserts = [assertion("scaling_gap", rep["gap"], thr, abs(rep["gap"]) <= thr)]
    if cfg.d == 1:
        sw = ex.check_d1_sandwich(results, experiment_config(cfg))
        asserts.append(assertion("d1_sandwich", [sw["A_spread"], sw["B_spread"]], sw["factor"], sw["pass"]))
        rep["sandwich"] = sw
    _emit_sizes(cfg, out, results, "scaling relation")
    return asserts, {"xi": xi.as_dict(), "chi": chi.as_dict(), "relation": rep}, None


def run_limit_shape(cfg: RunConfig, out: Outputs, threads: int):
    st = cfg.block("statistics")
    rep = ex.check_limit_shape_d1(experiment_config(cfg), tuple(st["x_ladder"]), st["sizes"],
                                  st["thresholds"].get("rel_tol", 0.05))
    asserts = [assertion("boundary_shift_identity", rep["identity_residual"], 1e-9, rep["identity_residual"] <= 1e-9)]
    for r in rep["rows"]:
        asserts.append(assertion(f"mu_gap L={r['L']} x={r['x']}", r["gap"], r["tol"], r["pass"]))
    out.csv("stats.csv", ["L", "x", "mu", "gap", "stderr", "tol"],
            [(r["L"], r["x"], r["mu"], r["gap"], r["stderr"], r["tol"]) for r in rep["rows"]])
    if cfg.block("output")["plots"]:
        out.write("plot.gp", plot_script("stats.csv", ["L", "x", "mu"], "time constant", logscale=False))
    return asserts, rep, None


def run_profile(cfg: RunConfig, out: Outputs, threads: int):
    st = cfg.block("statistics")
    results = _run(cfg, threads)
    th = st["thresholds"]
    prof = ex.localization_profile(results, cfg.d, th.get("stability", ex.STABILITY))
    frac = ex.delocalization_fraction(results, st["h_ladder"], th.get("fraction_floor", 0.05), cfg.d)
    asserts = [assertion("profile_envelope_spread", prof["spread"], prof["factor"], prof["pass"])]
    if cfg.d <= 3:
        worst = min(r["fraction_at_half_median"] for r in frac["rows"])
        asserts.append(assertion("delocalized_fraction", worst, frac["floor"], frac["pass"]))
    rows = []
    for r in prof["rows"]:
        rows.extend((r["L"], b, v) for b, v in zip(r["bins"], r["ratio"]))
    out.csv("stats.csv", ["L", "bin", "ratio"], rows)
    return asserts, {"profile": prof, "fraction": frac}, None


def run_concentration(cfg: RunConfig, out: Outputs, threads: int):
    results = _run(cfg, threads)
    th = cfg.block("statistics")["thresholds"]
    rep = ex.check_concentration(results, cfg.d, th.get("var_slope", 1.1), th.get("grad_slope", 0.1))
    if rep.get("frozen"):
        asserts = [assertion("var_zero_frozen", 0.0, 0.0, True)]
    else:
        asserts = [
            assertion("var_slope", rep["var_slope"], th.get("var_slope", 1.1), rep["checks"]["var_slope"]),
            assertion("exceed_2sigma", rep["exceed_2sigma"], 0.10, rep["checks"]["exceed_2sigma"]),
            assertion("exceed_3sigma", rep["exceed_3sigma"], 0.02, rep["checks"]["exceed_3sigma"]),
            assertion("gradient_slope", rep["gradient_slope"], th.get("grad_slope", 0.1), rep["checks"]["gradient_trend"]),
        ]
    _emit_sizes(cfg, out, results, "ground energy concentration")
    return asserts, rep, None


def run_shiftpi(cfg: RunConfig, out: Outputs, threads: int):
    st = cfg.block("statistics")
    rep = ex.check_shift_pi(tuple(st["sizes"]), st["eps"], cfg.d, st["thresholds"].get("stability", ex.STABILITY))
    asserts = [assertion(k, v, True, v) for k, v in rep["checks"].items()]
    out.csv("stats.csv", ["L", "max_laplacian_L2", "energy_scaled", "min_inner"],
            [(r["L"], r["max_laplacian_L2"], r["energy_scaled"], r["min_inner"]) for r in rep["rows"]])
    if cfg.block("output")["plots"]:
        out.write("plot.gp", plot_script("stats.csv", ["L", "max_laplacian_L2", "energy_scaled"], "shift function"))
    return asserts, rep, None


def run_disorder_dump(cfg: RunConfig, out: Outputs, threads: int):
    m = cfg.block("model")
    L = m["L"]
    field_ = make_field(disorder_spec(cfg), cfg.seed, cfg.d, cfg.n)
    dom = BoxDomain.cube(L, cfg.d)
    verts = dom.vertices()
    e = experiment_config(cfg).e
    ts = np.linspace(-2.0, 2.0, 41)
    t = np.broadcast_to(ts[None, :, None] * e, (len(verts), len(ts), cfg.n))
    vals = field_.eval(verts, t)
    again = field_.eval(verts, t)
    same = bool(np.array_equal(vals, again, equal_nan=True))
    rows = [list(map(int, v)) + [float(tt), float(x)] for v, row in zip(verts, vals) for tt, x in zip(ts, row)]
    out.csv("disorder.csv", [f"v{i}" for i in range(cfg.d)] + ["t", "eta"], rows)
    finite = float(np.mean(np.isfinite(vals)))
    return [assertion("reproducible_evaluation", same, True, same)], {"finite_fraction": finite}, None


HANDLERS = {
    "identity-check": run_identity_check,
    "solve": run_solve,
    "greens": run_greens,
    "exponents": run_exponents,
    "scaling": run_scaling,
    "limit-shape": run_limit_shape,
    "profile": run_profile,
    "concentration": run_concentration,
    "shiftpi": run_shiftpi,
    "disorder-dump": run_disorder_dump,
}


# driver ---------------------------------------------------------------------------


def build_report(cfg: RunConfig, asserts, details, manifest) -> dict:
    return {
        "artifact": "msre",
        "version": __version__,
        "config": cfg.to_dict(),
        "assertions": asserts,
        "pass": all(a["pass"] for a in asserts),
        "details": details,
        "manifest": [{"file": k, "sha256": v} for k, v in sorted(manifest.items())],
    }


def dispatch(cfg: RunConfig, out_dir: str, threads: int = 1, budget: float | None = None) -> tuple[int, dict | None]:
    """Run one configured experiment; returns (exit code, report)."""
    out = Outputs(out_dir)
    if budget is None:
        budget = cfg.block("budget")["node_seconds"]
    if cfg.d == 4 and cfg.kind in ("exponents", "scaling", "profile", "concentration"):
        print("advisory: d = 4 laws are logarithmic and not resolvable at desk scale; "
              "results are reported without acceptance meaning", file=sys.stderr)
    t0 = time.time()
    try:
        if budget is not None:
            cost = estimate_cost(cfg)
            if cost > budget:
                raise BudgetError(f"estimated {cost:.3g} node-seconds exceeds budget {budget:.3g}")
        asserts, details, _ = HANDLERS[cfg.kind](cfg, out, threads)
    except BudgetError as exc:
        print(f"budget refusal: {exc}", file=sys.stderr)
        return EXIT_BUDGET, None
    except (PreconditionError, InfeasibleError, UnsupportedError, FitError, SolverError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE, None
    report = build_report(cfg, asserts, details, out.files)
    out.write("report.json", dumps(report), record=False)
    out.write("timing.json", dumps({"wall_clock_seconds": time.time() - t0, "threads": threads}), record=False)
    for a in asserts:
        log.info("%s: %s (threshold %s) %s", a["name"], a["value"], a["threshold"], "PASS" if a["pass"] else "FAIL")
    return (EXIT_OK if report["pass"] else EXIT_ASSERT), report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msre", description="Minimal surfaces in random environment: solvers and experiments.")
    p.add_argument("--version", action="version", version=f"msre {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run file")
    common.add_argument("--out-dir", default="msre-out", help="directory for every output file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="replica worker threads")
    common.add_argument("--budget-node-seconds", type=float, default=None, help="refuse runs estimated above this")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for kind in EXPERIMENT_KINDS:
        sub.add_parser(kind, parents=[common], help=f"run a {kind} configuration")
    return p


def _setup_logging():
    level = os.environ.get("MSRE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError("MSRE_LOG must be one of error, info, debug")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        cfg = parse_config(args.config)
        if cfg.kind != args.command:
            raise UsageError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.budget_node_seconds is not None and args.budget_node_seconds < 0:
            raise UsageError("--budget-node-seconds must be >= 0")
    except (UsageError, ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        code, report = dispatch(cfg, args.out_dir, args.threads, args.budget_node_seconds)
    except (ConfigError, ParameterError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if report is not None:
        for a in report["assertions"]:
            print(f"{'PASS' if a['pass'] else 'FAIL'} {a['name']}: {jsonable(a['value'])} (threshold {jsonable(a['threshold'])})")
    return code


if __name__ == "__main__":
    sys.exit(main())
