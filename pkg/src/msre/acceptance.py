"""Report builders for the acceptance checks.

Each ``check_*`` function runs one check end to end from fixed seeds and
returns a JSON-ready dict with a ``pass`` flag.  :class:`Suite` times the
builders and keeps wall-clock figures out of the reports, so the reports
are reproducible byte for byte.  The test suite and
``scripts/run_acceptance.py`` both go through :class:`Suite`.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import experiments as ex
from . import greens
from . import rng
from .cli import dumps
from .disorder import _offset_table, make_field, white_noise
from .lattice import BoxDomain, dirichlet_matrix
from .solvers import EnergyModel, HeightGrid, solve_dp_1d, solve_linear_closed_form, solve_local, solve_mincut

SEED = 20240601


def brute_force(model: EnergyModel, heights) -> tuple[np.ndarray, float]:
    """Exhaustive minimum over ``heights`` at every vertex (n = 1).

    Energies of all |heights|^|Lambda| labellings are summed from per-site
    and per-edge tables; ties go to the lexicographically first labelling.
    """
    heights = np.asarray(heights, dtype=float)
    dom = model.domain
    verts = dom.vertices()
    N, K = dom.size, len(heights)
    table = model.lam * model.disorder.eval(verts, np.broadcast_to(heights, (N, K))[:, :, None])
    tau = model.tau.values[..., 0]
    lo = np.asarray(dom.lo)
    for i, v in enumerate(verts):
        for ax in range(dom.d):
            for sgn in (-1, 1):
                u = v.copy()
                u[ax] += sgn
                if not dom.contains(u):
                    table[i] += 0.5 * (heights - tau[tuple(u - lo + 1)]) ** 2
    labels = np.array(list(itertools.product(range(K), repeat=N)), dtype=np.int64)
    E = table[np.arange(N), labels].sum(axis=1)
    pair = 0.5 * (heights[:, None] - heights[None, :]) ** 2
    for p, q in dom.interior_edges():
        E += pair[labels[:, p], labels[:, q]]
    j = int(np.argmin(E))
    return heights[labels[j]], float(E[j])


# algebraic identities ----------------------------------------------------------------


def check_main_identity(seed: int = SEED, instances: int = 1000) -> dict:
    combos = [(d, n, lam) for d in (1, 2) for n in (1, 2) for lam in (0.25, 1.0, 4.0)]
    res = [ex.main_identity_instance(seed, i, *combos[i % len(combos)]) for i in range(instances)]
    worst = max(res)
    return {"instances": instances, "max_relative_residual": worst, "threshold": 1e-9, "pass": worst <= 1e-9}


def check_boundary_shift(seed: int = SEED, instances: int = 100) -> dict:
    combos = [(d, n) for d in (1, 2, 3) for n in (1, 2)]
    lam_ladder = (0.25, 1.0, 4.0)
    lin = []
    for i in range(instances):
        d, n = combos[i % len(combos)]
        r = ex.linear_shift_instance(seed, i, d, n, lam_ladder[i % 3])
        lin.append(max(r.surface_residual, r.energy_residual))
    dp = []
    for i in range(instances):
        r = ex.aligned_d1_shift_instance(seed, i, lam_ladder[i % 3])
        dp.append(max(r.surface_residual, r.energy_residual))
    worst_lin, worst_dp = max(lin), max(dp)
    return {
        "linear_closed_form": {"instances": instances, "max_residual": worst_lin},
        "d1_dp_aligned": {"instances": instances, "max_residual": worst_dp},
        "threshold": 1e-9,
        "pass": worst_lin <= 1e-9 and worst_dp <= 1e-9,
    }


# solvers ---------------------------------------------------------------------------------


def check_solver_oracles(seed: int = SEED) -> dict:
    dp_rows = []
    for i in range(10):
        model = EnergyModel(BoxDomain((-2,), (2,)), white_noise(rng.substream(seed, rng.FUZZ, 1, i), 1, 1))
        grid = HeightGrid((-1.0,), (1.0,), 0.5)
        gs = solve_dp_1d(model, grid)
        h, e = brute_force(model, grid.axis(0))
        dp_rows.append(bool(np.array_equal(gs.surface.interior[:, 0], h)) and abs(gs.energy - e) <= 1e-12 * (1 + abs(e)))
    mc_rows = []
    for i in range(5):
        model = EnergyModel(BoxDomain.cube(1, 2), white_noise(rng.substream(seed, rng.FUZZ, 2, i), 2, 1))
        grid = HeightGrid((-0.75,), (0.75,), 0.5)
        gs = solve_mincut(model, grid)
        h, e = brute_force(model, grid.axis(0))
        mc_rows.append(bool(np.array_equal(gs.surface.interior[:, 0], h)) and abs(gs.energy - e) <= 1e-12 * (1 + abs(e)))
    cross = []
    for i in range(50):
        L = 4 + i % 13
        model = EnergyModel(BoxDomain.cube(L, 1), white_noise(rng.substream(seed, rng.FUZZ, 3, i), 1, 1),
                            lam=(0.5, 1.0, 2.0)[i % 3])
        grid = HeightGrid.symmetric(4, 0.25)
        a, b = solve_dp_1d(model, grid), solve_mincut(model, grid)
        cross.append(bool(np.array_equal(a.surface.values, b.surface.values))
                     and abs(a.energy - b.energy) <= 1e-12 * (1 + abs(a.energy)))
    return {
        "dp_vs_brute_force_5x5": {"instances": len(dp_rows), "agree": sum(dp_rows)},
        "mincut_vs_brute_force_3x3x4": {"instances": len(mc_rows), "agree": sum(mc_rows)},
        "mincut_vs_dp_d1": {"instances": len(cross), "agree": sum(cross)},
        "pass": all(dp_rows) and all(mc_rows) and all(cross),
    }


def check_linear_closed_form(seed: int = SEED, instances: int = 20, replicas: int = 200) -> dict:
    dom = BoxDomain.cube(8, 2)
    gaps = []
    for i in range(instances):
        model = EnergyModel(dom, make_field({"kind": "linear"}, rng.substream(seed, rng.FUZZ, 4, i), 2, 2))
        exact = solve_linear_closed_form(model)
        heur = solve_local(model, restarts=3, sweeps=1000, seed=i)
        gaps.append(float(np.abs(heur.surface.values - exact.surface.values).max()))
    cfg = ex.ExperimentConfig(d=1, disorder={"kind": "linear"}, sizes=(16, 32, 64, 128, 256), replicas=replicas,
                              seed=seed, solver="closed_form")
    xi = ex.estimate_transversal(ex.run_replicas(cfg), meta=cfg.meta())
    ok_cd = max(gaps) <= 1e-6
    ok_xi = 1.45 <= xi.slope <= 1.55
    return {
        "coordinate_descent": {"instances": instances, "max_norm_gap": max(gaps), "threshold": 1e-6, "pass": ok_cd},
        "xi_linear_d1": {"value": xi.slope, "stderr": xi.stderr, "window": [1.45, 1.55], "pass": ok_xi},
        "pass": ok_cd and ok_xi,
    }


# white-noise experiments in d = 1 -----------------------------------------------------------


def heavy_config(seed: int = SEED, replicas: int = 200) -> ex.ExperimentConfig:
    return ex.ExperimentConfig(d=1, sizes=(16, 32, 64, 128, 256), replicas=replicas, seed=seed)


def heavy_run(seed: int = SEED, replicas: int = 200):
    return ex.run_replicas(heavy_config(seed, replicas))


def check_exponents(results, seed: int = SEED) -> dict:
    cfg = heavy_config(seed)
    xi = ex.estimate_transversal(results, meta=cfg.meta())
    chi = ex.estimate_energy_fluct(results, meta=cfg.meta())
    gap = chi.slope - (2 * xi.slope - 1)
    checks = {
        "xi_window": 0.55 <= xi.slope <= 0.80,
        "chi_window": 0.20 <= chi.slope <= 0.45,
        "scaling_gap": abs(gap) <= 0.1,
    }
    return {"xi": xi.as_dict(), "chi": chi.as_dict(), "gap": gap, "checks": checks, "pass": all(checks.values())}


def check_sandwich(results, seed: int = SEED) -> dict:
    return ex.check_d1_sandwich(results, heavy_config(seed), sizes=(32, 64, 128), factor=2.0)


def check_limit_shape(seed: int = SEED, replicas: int = 200) -> dict:
    cfg = ex.ExperimentConfig(d=1, sizes=(64, 128), replicas=replicas, seed=seed)
    return ex.check_limit_shape_d1(cfg, x_ladder=(0.0, 0.5, 1.0), rel_tol=0.05)


# Green's functions ------------------------------------------------------------------------


def check_greens(seed: int = SEED) -> dict:
    bounds = []
    for d, sizes in ((1, (8, 32, 128)), (2, (8, 16, 32)), (3, (4, 8, 16))):
        bounds += [r.as_dict() for r in greens.check_green_bounds(d, sizes, samples=10, seed=seed)]
    gr = [greens.gambler_ruin_check(n, m, 100_000, rng.substream(seed, rng.GAMBLER, n, m)) for n, m in ((5, 5), (1, 9))]
    mc = greens.green_mc_agreement(2, 6, pairs=20, walkers=10_000, seed=seed)
    ok = all(b["pass"] for b in bounds) and all(g["pass"] for g in gr) and mc["pass"]
    return {"bounds": bounds, "gambler_ruin": gr, "mc_agreement": mc, "pass": ok}


# concentration ------------------------------------------------------------------------------


def _concentration_verdict(rep: dict) -> dict:
    checks = {k: rep["checks"][k] for k in ("var_slope", "gradient_trend")}
    return {"var_slope": rep["var_slope"], "gradient_slope": rep["gradient_slope"],
            "exceed_2sigma": rep["exceed_2sigma"], "exceed_3sigma": rep["exceed_3sigma"],
            "checks": checks, "pass": all(checks.values())}


def check_concentration(results_d1, seed: int = SEED, replicas_d2: int = 100) -> dict:
    d1 = _concentration_verdict(ex.check_concentration(results_d1, 1))
    cfg = ex.ExperimentConfig(d=2, sizes=(2, 4, 6, 8), replicas=replicas_d2, seed=seed,
                              grid={"W": 4.0, "step": 0.25})
    d2 = _concentration_verdict(ex.check_concentration(ex.run_replicas(cfg), 2))
    return {"d1": d1, "d2": d2, "pass": d1["pass"] and d2["pass"]}


# shift function ------------------------------------------------------------------------------


def check_shift_function(eps: float = 0.99) -> dict:
    per_d = {str(d): ex.check_shift_pi((16, 32, 64), eps, d) for d in (1, 2, 3)}
    return {"eps": eps, "by_dimension": per_d, "pass": all(r["pass"] for r in per_d.values())}


# registry ------------------------------------------------------------------------------------


@dataclass
class Criterion:
    name: str
    build: object
    runtime_limit: float | None
    heavy: bool = False


CRITERIA = [
    Criterion("main_identity", check_main_identity, 10.0),
    Criterion("boundary_shift", check_boundary_shift, 30.0),
    Criterion("solver_oracles", check_solver_oracles, 120.0),
    Criterion("linear_closed_form", check_linear_closed_form, 300.0),
    Criterion("exponents_d1", check_exponents, None, heavy=True),
    Criterion("sandwich_d1", check_sandwich, 600.0, heavy=True),
    Criterion("limit_shape_d1", check_limit_shape, 300.0),
    Criterion("greens_bounds", check_greens, 300.0),
    Criterion("concentration", check_concentration, 600.0, heavy=True),
    Criterion("shift_function", check_shift_function, 60.0),
]
NAMES = [c.name for c in CRITERIA]


def failing_parts(report, path: str = "") -> list[str]:
    """Dotted paths of the failing sub-checks inside a report."""
    out = []
    if isinstance(report, dict):
        for k, v in report.get("checks", {}).items():
            if v is False:
                out.append(f"{path}{k}")
        for k, v in report.items():
            if k != "checks":
                out += failing_parts(v, f"{path}{k}.")
    elif isinstance(report, list):
        for i, v in enumerate(report):
            if isinstance(v, dict) and v.get("pass") is False and not failing_parts(v):
                out.append(f"{path}{i}")
            else:
                out += failing_parts(v, f"{path}{i}.")
    return out


@dataclass
class Outcome:
    """One criterion's report and wall-clock time (kept out of the report)."""

    name: str
    report: dict
    seconds: float
    runtime_limit: float | None

    @property
    def on_time(self) -> bool:
        return self.runtime_limit is None or self.seconds <= self.runtime_limit

    @property
    def passed(self) -> bool:
        return bool(self.report["pass"]) and self.on_time

    def line(self) -> str:
        limit = "no limit" if self.runtime_limit is None else f"limit {self.runtime_limit:.0f}s"
        bad = failing_parts(self.report)
        detail = "all checks met" if self.report["pass"] else "failing " + ", ".join(bad or ["report"])
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {detail}; {self.seconds:.1f}s ({limit})"


def clear_caches():
    """Drop memoized tables so a rerun recomputes everything."""
    dirichlet_matrix.cache_clear()
    _offset_table.cache_clear()


@dataclass
class Suite:
    """Runs criteria lazily, sharing the d = 1 white-noise replicas."""

    seed: int = SEED
    _heavy: list | None = None
    _heavy_seconds: float = 0.0
    outcomes: dict = field(default_factory=dict)

    def heavy(self):
        if self._heavy is None:
            t0 = time.perf_counter()
            self._heavy = heavy_run(self.seed)
            self._heavy_seconds = time.perf_counter() - t0
        return self._heavy

    def run(self, name: str) -> Outcome:
        if name in self.outcomes:
            return self.outcomes[name]
        crit = CRITERIA[NAMES.index(name)]
        extra = 0.0
        if crit.heavy:
            first = self._heavy is None
            results = self.heavy()
            # the replica run is charged to the first criterion that needs it
            extra = self._heavy_seconds if first else 0.0
            t0 = time.perf_counter()
            rep = crit.build(results, seed=self.seed)
        else:
            t0 = time.perf_counter()
            rep = crit.build(seed=self.seed) if name != "shift_function" else crit.build()
        out = Outcome(name, rep, time.perf_counter() - t0 + extra, crit.runtime_limit)
        self.outcomes[name] = out
        return out

    def run_all(self) -> dict[str, Outcome]:
        for name in NAMES:
            self.run(name)
        return {n: self.outcomes[n] for n in NAMES}

    def report_bytes(self) -> dict[str, bytes]:
        return {n: dumps(o.report).encode() for n, o in self.run_all().items()}


def fresh_report_bytes(seed: int = SEED) -> dict[str, bytes]:
    """Run every criterion from scratch with caches cleared."""
    clear_caches()
    return Suite(seed).report_bytes()
