"""Replica runs and the statistics built on them.

A run solves many independent disorder samples per box size and records
per-replica summaries (:class:`ReplicaResult`).  The estimators below turn
those into exponent fits and pass/fail checks.  Every random choice flows
from the master seed through :func:`msre.rng.substream`, so a run is a pure
function of its configuration.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .disorder import make_field, white_noise
from .errors import BudgetError, FitError, ParameterError, PreconditionError
from .lattice import BoxDomain, Surface, dirichlet_inner, harmonic_extension, laplacian, solve_dirichlet
from .solvers import (
    EnergyModel,
    HeightGrid,
    default_grid,
    solve,
    verify_boundary_shift,
    main_identity_terms,
)

TOL_GAP = 0.1
STABILITY = 1.5


@dataclass
class ExperimentConfig:
    d: int
    n: int = 1
    disorder: dict = field(default_factory=lambda: {"kind": "white"})
    lam: float = 1.0
    direction: tuple | None = None
    sizes: tuple = (8, 16, 32, 64, 128, 256)
    replicas: int = 30
    seed: int = 0
    solver: str = "auto"
    grid: dict | None = None
    solver_options: dict = field(default_factory=dict)
    frozen: bool = False
    fit_floor: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ParameterError("d and n must be positive")
        self.sizes = tuple(int(L) for L in self.sizes)
        if not self.sizes or any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ParameterError("sizes must be strictly increasing")
        if self.sizes[0] < 1:
            raise ParameterError("sizes must be positive")
        if self.replicas < 1:
            raise ParameterError("replicas must be at least 1")
        if not self.lam > 0:
            raise ParameterError("lam must be positive")
        e = np.zeros(self.n) if self.direction is None else np.asarray(self.direction, dtype=float)
        if self.direction is None:
            e[0] = 1.0
        if e.shape != (self.n,) or abs(np.linalg.norm(e) - 1.0) > 1e-12:
            raise ParameterError("direction must be a unit vector in R^n")
        self.direction = tuple(float(x) for x in e)

    @property
    def e(self) -> np.ndarray:
        return np.asarray(self.direction)

    def meta(self) -> dict:
        return {"d": self.d, "n": self.n, "kind": self.disorder.get("kind", "white"), "lam": self.lam}


@dataclass
class ReplicaResult:
    L: int
    replica: int
    seed: int
    ge: float
    center_e: float
    center_norm: float
    gradient: float
    bands: dict | None
    profile_sum: np.ndarray
    profile_count: np.ndarray
    norms: np.ndarray
    solver: str
    surface: Surface | None = field(default=None, repr=False)


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    stderr: float
    r2: float
    sizes: list
    means: list
    stderrs: list
    window: tuple
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window)
        return out


# running ------------------------------------------------------------------------


def replica_seed(config: ExperimentConfig, L: int, r: int) -> int:
    if config.frozen:
        return rng.substream(config.seed, rng.REPLICA, 0, 0)
    return rng.substream(config.seed, rng.REPLICA, L, r)


def make_model(config: ExperimentConfig, L: int, seed: int) -> EnergyModel:
    dom = BoxDomain.cube(L, config.d)
    return EnergyModel(dom, make_field(config.disorder, seed, config.d, config.n), config.lam)


def config_grid(config: ExperimentConfig, model: EnergyModel) -> HeightGrid | None:
    if not config.grid:
        return None
    g = config.grid
    return HeightGrid.symmetric(float(g["W"]), float(g["step"]), config.n)


def estimate_cost(config: ExperimentConfig) -> float:
    """Rough node-seconds for the whole run (used only for budget refusal)."""
    total = 0.0
    for L in config.sizes:
        model = make_model(config, L, 0)
        grid = config_grid(config, model) or default_grid(model)
        sites = model.domain.size
        states = grid.size
        solver = config.solver
        if solver == "auto":
            solver = "dp" if config.d == 1 else ("mincut" if config.n == 1 else "local")
        if solver == "mincut":
            per = sites * states * states * 2e-8
        elif solver == "local":
            opts = config.solver_options
            per = sites * states * opts.get("sweeps", 200) * opts.get("restarts", 3) * 1e-8
        else:
            per = sites * states * 4e-7
        total += per * config.replicas
    return total


def _bands(phi: Surface, L: int, e: np.ndarray) -> dict:
    vals = np.abs(phi.interior @ e)
    dist = np.abs(phi.domain.vertices()[:, 0])
    out = {}
    for j in range(0, math.ceil(math.log2(max(L, 1))) + 1):
        k = 2**j
        sel = dist >= L - k
        out[k] = float(vals[sel].max())
    return out


def summarize(config: ExperimentConfig, L: int, r: int, seed: int, gs, keep_surface: bool = False) -> ReplicaResult:
    phi = gs.surface
    dom = phi.domain
    inter = phi.interior
    norms = np.linalg.norm(inter, axis=1)
    c = dom.index_of((0,) * config.d)
    rv = dom.boundary_distances()
    rmax = int(rv.max())
    psum = np.bincount(rv, weights=norms, minlength=rmax + 1)
    pcnt = np.bincount(rv, minlength=rmax + 1)
    return ReplicaResult(
        L=L,
        replica=r,
        seed=seed,
        ge=float(gs.energy),
        center_e=float(abs(inter[c] @ config.e)),
        center_norm=float(norms[c]),
        gradient=float(dirichlet_inner(phi, phi)),
        bands=_bands(phi, L, config.e) if config.d == 1 else None,
        profile_sum=psum,
        profile_count=pcnt,
        norms=norms,
        solver=gs.solver,
        surface=phi if keep_surface else None,
    )


def _run_one(config: ExperimentConfig, L: int, r: int, keep_surface: bool) -> ReplicaResult:
    seed = replica_seed(config, L, r)
    model = make_model(config, L, seed)
    gs = solve(model, config.solver, config_grid(config, model), **config.solver_options)
    return summarize(config, L, r, seed, gs, keep_surface)


def run_replicas(
    config: ExperimentConfig, budget: float | None = None, keep_surfaces: bool = False, threads: int | None = None
) -> list[ReplicaResult]:
    """Solve every (size, replica) pair; results ordered by (L, replica)."""
    if budget is not None:
        cost = estimate_cost(config)
        if cost > budget:
            raise BudgetError(f"estimated {cost:.3g} node-seconds exceeds budget {budget:.3g}")
    tasks = [(L, r) for L in config.sizes for r in range(config.replicas)]
    nthreads = threads or config.threads

    def work(t):
        L, r = t
        try:
            return _run_one(config, L, r, keep_surfaces)
        except Exception as exc:  # attach the failing pair for the caller
            exc.args = (f"L={L} replica={r}: {exc}",) + exc.args[1:]
            raise

    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            return list(pool.map(work, tasks))
    return [work(t) for t in tasks]


# fitting --------------------------------------------------------------------------


def fit_loglog(sizes, means, stderrs, floor: int = 0, meta: dict | None = None) -> ExponentFit:
    """OLS of log mean against log L; slope error by the delta method."""
    order = np.argsort(np.asarray(sizes))
    sizes = np.asarray(sizes, dtype=float)[order]
    means = np.asarray(means, dtype=float)[order]
    stderrs = np.asarray(stderrs, dtype=float)[order]
    keep = sizes >= floor
    sizes, means, stderrs = sizes[keep], means[keep], stderrs[keep]
    if len(sizes) < 2:
        raise FitError("a fit needs at least two sizes")
    bad = np.flatnonzero(~(means > 0))
    if len(bad):
        raise FitError(f"non-positive mean at L={int(sizes[bad[0]])}")
    x = np.log(sizes)
    y = np.log(means)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    w = xc / sxx
    var_y = (stderrs / means) ** 2
    se = float(math.sqrt(np.sum(w * w * var_y)))
    resid = y - (intercept + slope * x)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return ExponentFit(
        slope, intercept, se, r2, sizes.astype(int).tolist(), means.tolist(), stderrs.tolist(),
        (int(sizes[0]), int(sizes[-1])), dict(meta or {}),
    )


def _by_size(results) -> dict[int, list[ReplicaResult]]:
    out: dict[int, list] = {}
    for r in sorted(results, key=lambda r: (r.L, r.replica)):
        out.setdefault(r.L, []).append(r)
    return out


def _check_ladder(groups, min_replicas):
    if len(groups) < 2:
        raise FitError("need at least two sizes")
    for L, rs in groups.items():
        if len(rs) < min_replicas:
            raise PreconditionError(f"L={L} has {len(rs)} replicas; need {min_replicas}")


def jackknife_std(x) -> tuple[float, float]:
    """Sample standard deviation and its leave-one-out jackknife error."""
    x = np.asarray(x, dtype=float)
    R = len(x)
    if R > 1 and np.ptp(x) == 0:
        # identical samples; np.std would return mean-roundoff noise
        return 0.0, 0.0
    s = float(np.std(x, ddof=1))
    if R < 3:
        return s, math.inf
    tot = x.sum()
    tot2 = (x * x).sum()
    m = (tot - x) / (R - 1)
    var = ((tot2 - x * x) - (R - 1) * m * m) / (R - 2)
    loo = np.sqrt(np.maximum(var, 0.0))
    se = math.sqrt((R - 1) / R * float(np.sum((loo - loo.mean()) ** 2)))
    return s, se


def estimate_transversal(
    results, statistic: str = "center_e", floor: int = 0, min_replicas: int = 30, meta: dict | None = None
) -> ExponentFit:
    """Slope of log E|phi_0 . e| (or log E|phi_0|) against log L."""
    if statistic not in ("center_e", "center_norm"):
        raise ParameterError("statistic must be center_e or center_norm")
    groups = _by_size(results)
    _check_ladder(groups, min_replicas)
    sizes, means, ses = [], [], []
    for L, rs in groups.items():
        v = np.array([getattr(r, statistic) for r in rs])
        sizes.append(L)
        means.append(float(v.mean()))
        ses.append(float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0)
    m = dict(meta or {})
    m["statistic"] = statistic
    m["exponent"] = "xi"
    return fit_loglog(sizes, means, ses, floor, m)


def estimate_energy_fluct(results, floor: int = 0, min_replicas: int = 30, meta: dict | None = None) -> ExponentFit:
    """Slope of log std(GE) against log L, jackknife errors per size."""
    groups = _by_size(results)
    _check_ladder(groups, min_replicas)
    sizes, sds, ses = [], [], []
    for L, rs in groups.items():
        s, se = jackknife_std([r.ge for r in rs])
        sizes.append(L)
        sds.append(s)
        ses.append(se)
    m = dict(meta or {})
    m["statistic"] = "std_ge"
    m["exponent"] = "chi"
    return fit_loglog(sizes, sds, ses, floor, m)


def check_scaling_relation(xi: ExponentFit, chi: ExponentFit, d: int) -> dict:
    """gap = chi - (2 xi + d - 2); pass iff |gap| <= max(0.1, 3 sigma)."""
    dx = xi.meta.get("d", d)
    dc = chi.meta.get("d", d)
    if dx != d or dc != d or xi.meta.get("n", 0) != chi.meta.get("n", 0):
        raise PreconditionError(f"configuration mismatch: xi from d={dx}, chi from d={dc}, relation for d={d}")
    gap = chi.slope - (2.0 * xi.slope + d - 2)
    se = math.sqrt(chi.stderr**2 + 4.0 * xi.stderr**2)
    thr = max(TOL_GAP, 3.0 * se)
    return {"xi": xi.slope, "chi": chi.slope, "gap": gap, "stderr": se, "threshold": thr, "pass": abs(gap) <= thr}


# identity instances ---------------------------------------------------------------


def _normals(seed: int, i: int, part: int, count: int) -> np.ndarray:
    return rng.normal(seed, rng.FUZZ, i, part, np.arange(count))


def main_identity_instance(seed: int, i: int, d: int, n: int, lam: float, L: int = 3) -> float:
    """Relative residual of the main identity for random phi and s on Lambda_L.

    phi is arbitrary on Lambda^+; s vanishes off Lambda.  The residual is
    divided by max(1, |H^eta(phi)|, |(phi, -Delta s)|, |grad s|^2 / 2).
    """
    dom = BoxDomain.cube(L, d)
    field_ = white_noise(rng.substream(seed, rng.FUZZ, i, 99), d, n)
    scale = 0.5 + 2.0 * float(rng.uniform(seed, rng.FUZZ, i, 98))
    pv = np.zeros(dom.padded_shape + (n,))
    mask = dom.plus_padded
    pv[mask] = scale * _normals(seed, i, 0, int(mask.sum()) * n).reshape(-1, n)
    phi = Surface(dom, pv)
    s = Surface.from_interior(dom, scale * _normals(seed, i, 1, dom.size * n).reshape(-1, n))
    t = main_identity_terms(field_, lam, dom, phi, s)
    return t["residual"] / max(1.0, abs(t["h0"]), abs(t["cross"]), t["half"])


def linear_shift_instance(seed: int, i: int, d: int, n: int, lam: float, L: int = 4):
    """Boundary-shift report for linear disorder and arbitrary Gaussian boundary data."""
    dom = BoxDomain.cube(L, d)
    tau = Surface.from_interior(dom, np.zeros((dom.size, n)))
    vals = tau.values.copy()
    shell = dom.shell_padded
    vals[shell] = 3.0 * _normals(seed, i, 2, int(shell.sum()) * n).reshape(-1, n)
    field_ = make_field({"kind": "linear"}, rng.substream(seed, rng.FUZZ, i, 97), d, n)
    model = EnergyModel(dom, field_, lam, Surface(dom, vals))
    return verify_boundary_shift(model, "closed_form")


def aligned_d1_shift_instance(seed: int, i: int, lam: float = 1.0, L: int = 8, step: float = 0.25, W: float = 6.0):
    """Boundary-shift report for d = 1 DP with white disorder and data whose
    harmonic extension lies on the height grid."""
    dom = BoxDomain.cube(L, 1)
    u = rng.uniform(seed, rng.FUZZ, i, 3, np.arange(2))
    left = step * (int(u[0] * 9) - 4)
    right = left + step * (2 * L + 2) * (int(u[1] * 5) - 2)
    tau = Surface.from_function(dom, 1, lambda v: np.where(v < 0, left, right).astype(float))
    field_ = white_noise(rng.substream(seed, rng.FUZZ, i, 96), 1, 1)
    model = EnergyModel(dom, field_, lam, tau)
    ext = harmonic_extension(dom, tau)
    centre = Surface(dom, step * np.round(ext.values / step))
    grid = HeightGrid.symmetric(W, step, 1, centre)
    return verify_boundary_shift(model, "dp", grid)


# d = 1 sandwich ---------------------------------------------------------------------


def sandwich_proxies(bands_list, L: int) -> tuple[float, float]:
    """Lower max_j 2^-j (E M_{2^j})^2 and upper sum_j 2^-j (1 + sqrt(E M_{2^j}^4))."""
    J = math.ceil(math.log2(max(L, 1)))
    lower = 0.0
    upper = 0.0
    for j in range(J + 1):
        k = 2**j
        Mk = np.array([b[k] for b in bands_list])
        lower = max(lower, 2.0**-j * float(Mk.mean()) ** 2)
        upper += 2.0**-j * (1.0 + math.sqrt(float(np.mean(Mk**4))))
    return lower, upper


def _stable_ratio(vals) -> float:
    vals = [v for v in vals if v > 0 and math.isfinite(v)]
    if not vals:
        return 1.0
    return max(vals) / min(vals)


def check_d1_sandwich(results, config: ExperimentConfig, sizes=None, factor: float = 2.0) -> dict:
    """lower <= A std(GE) and std(GE) <= B upper, with per-size A, B within ``factor``."""
    if config.d != 1:
        raise PreconditionError("the sandwich check is for d = 1")
    groups = _by_size(results)
    sizes = sorted(sizes or groups)
    rows = []
    for L in sizes:
        rs = groups.get(L)
        if not rs or any(r.bands is None for r in rs):
            raise PreconditionError(f"missing boundary-band maxima at L={L}")
        std = jackknife_std([r.ge for r in rs])[0] if len(rs) > 1 else 0.0
        lo, up = sandwich_proxies([r.bands for r in rs], L)
        a = lo / std if std > 0 else (0.0 if lo == 0 else math.inf)
        b = std / up
        rows.append({"L": L, "std": std, "lower": lo, "upper": up, "A": a, "B": b})
    A = max(r["A"] for r in rows)
    B = max(r["B"] for r in rows)
    ra = _stable_ratio([r["A"] for r in rows])
    rb = _stable_ratio([r["B"] for r in rows])
    ok = math.isfinite(A) and ra <= factor and rb <= factor
    ok = ok and all(r["lower"] <= A * r["std"] + 1e-12 and r["std"] <= B * r["upper"] + 1e-12 for r in rows)
    return {"rows": rows, "A": A, "B": B, "A_spread": ra, "B_spread": rb, "factor": factor, "pass": bool(ok)}


# limit shape ------------------------------------------------------------------------


def segment_model(config: ExperimentConfig, L: int, x: float, seed: int) -> EnergyModel:
    """I_L = {1, ..., L-1} with tau_0 = 0 and tau_L = x L."""
    dom = BoxDomain((1,), (L - 1,))
    tau = Surface.from_function(dom, config.n, lambda v: np.where(v == L, x * L, 0.0).reshape(-1, 1) * config.e)
    field_ = make_field(config.disorder, seed, 1, config.n)
    return EnergyModel(dom, field_, config.lam, tau)


def check_limit_shape_d1(
    config: ExperimentConfig, x_ladder=(0.0, 0.5, 1.0), sizes=None, rel_tol: float = 0.05, grid_step: float | None = None
) -> dict:
    """Estimate mu(x) - mu(0) from paired replicas at the two largest sizes.

    Each replica also checks the exact boundary-shift identity, and the
    report carries the worst residual.
    """
    if config.d != 1:
        raise PreconditionError("limit shape is checked for d = 1")
    sizes = sorted(sizes or config.sizes)[-2:]
    rows = []
    worst = 0.0
    for L in sizes:
        per_x = {}
        for x in x_ladder:
            ges = []
            for r in range(config.replicas):
                seed = replica_seed(config, L, r)
                model = segment_model(config, L, x, seed)
                grid = default_grid(model)
                if grid_step is not None:
                    grid = HeightGrid.symmetric(grid.W, grid_step, config.n, grid.site_shift)
                _check_slope_alignment(x, grid.step)
                rep = verify_boundary_shift(model, "dp", grid)
                worst = max(worst, rep.surface_residual, rep.energy_residual)
                ges.append(rep.energy_tau)
            per_x[x] = np.array(ges)
        base = per_x[x_ladder[0]] if x_ladder[0] == 0 else per_x.get(0.0)
        for x in x_ladder:
            diff = (per_x[x] - base) / L if base is not None else per_x[x] / L
            mu_gap = float(diff.mean()) - 0.5 * x * x
            se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else 0.0
            tol = rel_tol * 0.5 * x * x + 3.0 * se
            rows.append({"L": L, "x": x, "mu": float(per_x[x].mean() / L), "gap": mu_gap, "stderr": se,
                         "tol": tol, "pass": abs(mu_gap) <= tol})
    return {"rows": rows, "identity_residual": worst, "pass": all(r["pass"] for r in rows) and worst <= 1e-9}


def _check_slope_alignment(x: float, step: float):
    k = x / step
    if abs(k - round(k)) > 1e-9:
        raise PreconditionError(f"slope {x} is not a multiple of the grid step {step}")


# profiles ---------------------------------------------------------------------------


def localization_profile(results, d: int, factor: float = STABILITY) -> dict:
    """Binned E|phi_v| / r_v^{(4-d)/4} in dyadic bins of r_v.

    For each size the envelope constant is the largest ratio over the upper
    half of the non-empty bins.  Passes iff the largest envelope constant
    is at most ``factor`` times the smallest across sizes.  For d >= 4 the
    plain mean height is used.
    """
    expo = max(0.0, (4 - d) / 4)
    groups = _by_size(results)
    rows = []
    consts = []
    empty = 0
    for L, rs in groups.items():
        psum = sum(r.profile_sum for r in rs)
        pcnt = sum(r.profile_count for r in rs)
        rvals = np.arange(len(psum))
        nb = int(math.floor(math.log2(max(len(psum) - 1, 1)))) + 1
        bins, ratios = [], []
        for b in range(nb):
            sel = (rvals >= 2**b) & (rvals < 2 ** (b + 1))
            c = pcnt[sel].sum()
            if c == 0:
                empty += 1
                continue
            mean_h = float(psum[sel].sum() / c)
            mean_r = float((rvals[sel] * pcnt[sel]).sum() / c)
            bins.append(b)
            ratios.append(mean_h / mean_r**expo)
        top = ratios[len(ratios) // 2:]
        const = max(top) if top else math.nan
        consts.append(const)
        rows.append({"L": L, "bins": bins, "ratio": ratios, "envelope_constant": const})
    good = [c for c in consts if math.isfinite(c)]
    spread = max(good) / min(good) if good and min(good) > 0 else math.inf
    return {"rows": rows, "spread": spread, "factor": factor, "empty_bins": empty, "pass": bool(spread <= factor)}


def delocalization_fraction(results, h_ladder=(), floor: float = 0.05, d: int | None = None) -> dict:
    """E|{v : |phi_v| >= h}| / |Lambda| per size and h.

    Also reports the fraction at h = median(|phi_0|)/2 and, for d <= 3,
    requires it to be at least ``floor``.
    """
    groups = _by_size(results)
    rows = []
    ok = True
    for L, rs in groups.items():
        h_half = 0.5 * float(np.median([r.center_norm for r in rs]))
        ladder = sorted(set(float(h) for h in h_ladder) | {h_half})
        fr = {h: float(np.mean([np.mean(r.norms >= h) for r in rs])) for h in ladder}
        row = {"L": L, "h_half_median": h_half, "fraction": {repr(h): f for h, f in fr.items()},
               "fraction_at_half_median": fr[h_half]}
        if d is None or d <= 3:
            row["pass"] = fr[h_half] >= floor
            ok = ok and row["pass"]
        rows.append(row)
    return {"rows": rows, "floor": floor, "pass": ok}


# concentration ----------------------------------------------------------------------


def check_concentration(results, d: int, var_slope_max: float = 1.1, grad_slope_max: float = 0.1) -> dict:
    """Var(GE) against |Lambda|, standardized tail frequencies and gradient trend."""
    groups = _by_size(results)
    _check_ladder(groups, 2)
    vol, var, var_se, grad, grad_se = [], [], [], [], []
    z_all = []
    for L, rs in groups.items():
        ge = np.array([r.ge for r in rs])
        n = (2 * L + 1) ** d
        s, s_se = jackknife_std(ge)
        vol.append(n)
        var.append(s * s)
        var_se.append(2 * s * s_se)
        g = np.array([r.gradient for r in rs]) / n
        grad.append(float(g.mean()))
        grad_se.append(float(g.std(ddof=1) / math.sqrt(len(g))))
        if s > 0:
            z_all.append((ge - ge.mean()) / s)
    if all(v == 0 for v in var):
        return {"var_slope": 0.0, "frozen": True, "pass": True}
    vfit = fit_loglog(vol, var, var_se)
    gfit = fit_loglog([L for L in groups], grad, grad_se)
    z = np.concatenate(z_all) if z_all else np.zeros(0)
    ex2 = float(np.mean(np.abs(z) > 2)) if len(z) else 0.0
    ex3 = float(np.mean(np.abs(z) > 3)) if len(z) else 0.0
    checks = {
        "var_slope": vfit.slope <= var_slope_max,
        "exceed_2sigma": ex2 <= 0.10,
        "exceed_3sigma": ex3 <= 0.02,
        "gradient_trend": gfit.slope <= grad_slope_max,
    }
    return {
        "var_fit": vfit.as_dict(),
        "var_slope": vfit.slope,
        "gradient_fit": gfit.as_dict(),
        "gradient_slope": gfit.slope,
        "exceed_2sigma": ex2,
        "exceed_3sigma": ex3,
        "checks": checks,
        "pass": all(checks.values()),
    }


# closed-form linear statistics -----------------------------------------------------


def linear_closed_form_samples(d: int, L: int, lam: float, samples: int, seed: int = 0):
    """(GE, phi_0 . e1) for linear disorder drawn directly, no solver.

    zeta is sampled with an independent numpy generator, so agreement with
    the solver pipeline is a statistical (not bitwise) cross-check.
    """
    dom = BoxDomain.cube(L, d)
    g = np.random.default_rng([seed, L, d])
    Z = g.standard_normal((dom.size, samples))
    X = solve_dirichlet(dom, Z)
    c = dom.index_of((0,) * d)
    ge = -0.5 * lam**2 * np.sum(Z * X, axis=0)
    return ge, -lam * X[c]


def linear_center_mean(d: int, L: int, lam: float) -> float:
    """Exact E|phi_0 . e1| = lam sqrt(2/pi) |G^0|_2 for linear disorder."""
    dom = BoxDomain.cube(L, d)
    e = np.zeros(dom.size)
    e[dom.index_of((0,) * d)] = 1.0
    g0 = solve_dirichlet(dom, e)
    return lam * math.sqrt(2.0 / math.pi) * float(np.linalg.norm(g0))


# shift function -------------------------------------------------------------------


RAMP = 0.05
_KNOTS = ((0.0, 1.0), (RAMP, -1.0), (0.5 - RAMP, -1.0), (0.5 + RAMP, 1.0), (1.0 - RAMP, 1.0), (1.0, -1.0))


def _raw_step(u):
    return sum(s * np.maximum(u - k, 0.0) ** 3 for k, s in _KNOTS) / (6.0 * RAMP)


_STEP_NORM = 1.0 / float(_raw_step(np.array(1.0)))


def step_profile(u):
    """C^2 piecewise-cubic step from 0 (u <= 0) to 1 (u >= 1).

    The second derivative is a trapezoid wave (ramps of width ``RAMP``), so
    the curvature sits near its maximum over most of the transition and a
    coarse lattice samples that maximum well.
    """
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return np.where(u >= 1.0, 1.0, _STEP_NORM * _raw_step(u))


def bump_profile(x, eps: float, d: int) -> np.ndarray:
    """C^2 product bump: 1 on (-a, a)^d with a = 1 - eps/(3d), 0 off (-1, 1)^d."""
    a = 1.0 - eps / (3.0 * d)
    x = np.abs(np.asarray(x, dtype=float))
    q = 1.0 - step_profile((x - a) / (1.0 - a))
    return np.prod(q, axis=-1)


def build_shift_pi(L: int, eps: float, d: int) -> tuple[Surface, dict]:
    """pi_v = p(v / L): zero off Lambda_L, at least 1 on the inner box.

    The inner box is Lambda_{ceil((1 - eps/2d) L)}; when it does not fit
    inside L * (-a, a)^d the indicator of the inner box is used instead.
    """
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    if L < 1:
        raise ParameterError("L must be at least 1")
    dom = BoxDomain.cube(L, d)
    inner = math.ceil((1.0 - eps / (2 * d)) * L)
    a = 1.0 - eps / (3.0 * d)
    fallback = not inner < a * L
    verts = dom.vertices()
    if fallback:
        vals = (np.abs(verts).max(axis=1) <= inner).astype(float)
    else:
        vals = bump_profile(verts / L, eps, d)
    pi = Surface.from_interior(dom, vals)
    lap = laplacian(pi).values[..., 0]
    inner_sel = np.abs(verts).max(axis=1) <= inner
    energy = dirichlet_inner(pi, pi)
    report = {
        "L": L,
        "d": d,
        "eps": eps,
        "fallback": fallback,
        "support_ok": bool(np.all(pi.values[dom.shell_padded] == 0.0)),
        "min_inner": float(vals[inner_sel].min()),
        "value_at_origin": float(vals[dom.index_of((0,) * d)]),
        "max_laplacian_L2": float(np.abs(lap).max()) * L * L,
        "energy_scaled": energy / L ** (d - 2),
    }
    report["min_ok"] = report["min_inner"] >= 1.0
    return pi, report


def check_shift_pi(sizes=(16, 32, 64), eps: float = 0.99, d: int = 2, factor: float = STABILITY) -> dict:
    reps = [build_shift_pi(L, eps, d)[1] for L in sizes]
    lap = [r["max_laplacian_L2"] for r in reps]
    en = [r["energy_scaled"] for r in reps]
    checks = {
        "support": all(r["support_ok"] for r in reps),
        "min_inner": all(r["min_ok"] for r in reps),
        "laplacian_scaling": max(lap) <= factor * min(lap),
        "energy_scaling": max(en) <= factor * min(en),
    }
    return {"rows": reps, "checks": checks, "pass": all(checks.values())}
