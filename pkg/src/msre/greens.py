"""Discrete Green's functions on boxes, the potential kernel and walk checks.

``G_Lambda^v(x)`` is (1/2d) times the expected number of visits to v of a
simple random walk from x before it leaves Lambda.  Equivalently it solves
``(-Delta_Lambda) G = 1_v`` with zero values off Lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy import integrate

from . import rng
from .errors import DomainError, ParameterError, UnsupportedError
from .lattice import BoxDomain, dirichlet_matrix, solve_dirichlet


@dataclass(frozen=True, eq=False)
class GreenTable:
    """G_Lambda^v on Lambda (row-major vertex order); zero elsewhere."""

    domain: BoxDomain
    source: tuple
    values: np.ndarray

    def at(self, x) -> float:
        x = tuple(int(c) for c in x)
        if not self.domain.contains(x):
            return 0.0
        return float(self.values[self.domain.index_of(x)])

    def residual(self) -> float:
        """max |(-Delta_Lambda) G - 1_v| over Lambda."""
        A = dirichlet_matrix(self.domain)
        e = np.zeros(self.domain.size)
        e[self.domain.index_of(self.source)] = 1.0
        return float(np.abs(A @ self.values - e).max())

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.domain.shape)


def _check_vertex(domain: BoxDomain, v):
    v = tuple(int(c) for c in v)
    if len(v) != domain.d or not domain.contains(v):
        raise DomainError(f"vertex {v} is not in the box")
    return v


def green_exact(domain: BoxDomain, v) -> GreenTable:
    """Solve (-Delta_Lambda) G = 1_v by conjugate gradients."""
    v = _check_vertex(domain, v)
    e = np.zeros(domain.size)
    e[domain.index_of(v)] = 1.0
    vals = solve_dirichlet(domain, e)
    vals.setflags(write=False)
    return GreenTable(domain, v, vals)


def green_mc(domain: BoxDomain, v, x, walkers: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of G_Lambda^v(x) and its standard error.

    Walker w takes its k-th step from ``uniform(seed, GREENS_MC, w, k)``.
    """
    v = np.array(_check_vertex(domain, v))
    x = np.array(_check_vertex(domain, x))
    if walkers < 100:
        raise ParameterError("need at least 100 walkers")
    d = domain.d
    lo = np.asarray(domain.lo)
    hi = np.asarray(domain.hi)
    pos = np.tile(x, (walkers, 1))
    ids = np.arange(walkers)
    visits = np.zeros(walkers)
    alive = np.ones(walkers, dtype=bool)
    k = 0
    while alive.any():
        idx = np.flatnonzero(alive)
        p = pos[idx]
        visits[idx] += np.all(p == v, axis=1)
        u = rng.uniform(seed, rng.GREENS_MC, ids[idx], k)
        move = np.minimum((u * 2 * d).astype(np.int64), 2 * d - 1)
        ax = move // 2
        sgn = 2 * (move % 2) - 1
        p[np.arange(len(idx)), ax] += sgn
        pos[idx] = p
        alive[idx] = np.all((p >= lo) & (p <= hi), axis=1)
        k += 1
    occ = visits / (2 * d)
    return float(occ.mean()), float(occ.std(ddof=1) / math.sqrt(walkers))


# potential kernel ---------------------------------------------------------------


@dataclass
class PotentialKernel:
    """a(x) = lim_N sum_{n<=N} (P^0(X_n = 0) - P^0(X_n = x)).

    d = 1 is exact (|x|).  For d = 2 values come from the one-dimensional
    Fourier integral obtained by integrating the inverse-transform formula
    in one angle analytically; :meth:`series` gives the truncated defining
    sum for cross-checks.
    """

    d: int
    horizon: int = 4000
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d not in (1, 2):
            raise UnsupportedError("potential kernel is only computed for d in {1, 2}")

    def __call__(self, x) -> float:
        x = tuple(abs(int(c)) for c in np.atleast_1d(x))
        if len(x) != self.d:
            raise ParameterError("point has the wrong dimension")
        if self.d == 1:
            return float(x[0])
        key = tuple(sorted(x))
        if key not in self.cache:
            self.cache[key] = _a2_integral(*key)
        return self.cache[key]

    def series(self, x, N: int | None = None) -> float:
        return potential_kernel_series(self.d, x, N or self.horizon)


def _a2_integral(x1: int, x2: int) -> float:
    if x1 == 0 and x2 == 0:
        return 0.0

    def f(t):
        A = 2.0 - math.cos(t)
        r = math.sqrt(A * A - 1.0)
        z = A - r
        num = 1.0 - math.cos(x2 * t) * z**x1
        return num / r if r > 0 else 0.0

    # even integrand on [-pi, pi]; break the interval where cos(x2 t) oscillates
    brk = [k * math.pi / max(1, x2) for k in range(1, max(1, x2))]
    val, _ = integrate.quad(f, 0.0, math.pi, points=brk or None, limit=400, epsabs=1e-13, epsrel=1e-12)
    return 2.0 * val / math.pi


def potential_kernel(d: int, x) -> float:
    return PotentialKernel(d)(x)


def potential_kernel_series(d: int, x, N: int) -> float:
    """Truncated defining sum, from iterated walk transition convolutions.

    The walk distribution lives on a grid clipped at radius 4 sqrt(N); the
    mass lost to clipping is below 1e-6 for these radii.  To cancel the
    period-two oscillation the last two partial sums are averaged.
    """
    x = np.abs(np.atleast_1d(np.asarray(x, dtype=np.int64)))
    if len(x) != d:
        raise ParameterError("point has the wrong dimension")
    R = int(max(4 * math.sqrt(N), x.max() + 2))
    size = 2 * R + 1
    p = np.zeros((size,) * d)
    c = (R,) * d
    p[c] = 1.0
    xi = tuple(R + int(a) for a in x)
    total = 0.0
    prev = 0.0
    for _ in range(N + 1):
        prev = total
        total += p[c] - p[xi]
        q = np.zeros_like(p)
        for ax in range(d):
            q += np.roll(p, 1, axis=ax) + np.roll(p, -1, axis=ax)
        p = q / (2 * d)
        # zero the wrap-around layer so clipped mass leaves instead of folding back
        for ax in range(d):
            sl = [slice(None)] * d
            sl[ax] = 0
            p[tuple(sl)] = 0.0
            sl[ax] = -1
            p[tuple(sl)] = 0.0
    return 0.5 * (total + prev)


# gambler's ruin -----------------------------------------------------------------


def _walk_steps(seed, tag, ids, k):
    return np.where(rng.uniform(seed, tag, ids, k) < 0.5, -1, 1)


def gambler_ruin_check(n: int, m: int, trials: int = 100_000, seed: int = 0) -> dict:
    """Estimate P(tau_n <= tau_{-m}) for a walk from 0 against m / (n + m)."""
    if n < 1 or m < 1:
        raise ParameterError("n and m must be positive")
    pos = np.zeros(trials, dtype=np.int64)
    ids = np.arange(trials)
    alive = np.ones(trials, dtype=bool)
    k = 0
    while alive.any():
        idx = np.flatnonzero(alive)
        pos[idx] += _walk_steps(seed, rng.GAMBLER, ids[idx], k)
        alive[idx] = (pos[idx] < n) & (pos[idx] > -m)
        k += 1
    hit = (pos >= n).astype(float)
    p = float(hit.mean())
    se = math.sqrt(max(p * (1 - p), 1e-300) / trials)
    exact = m / (n + m)
    gap = abs(p - exact)
    return {"n": n, "m": m, "trials": trials, "estimate": p, "stderr": se, "exact": exact, "gap": gap,
            "pass": gap <= 3 * se}


def exit_time_tail_check(n: int, ts, trials: int = 10_000, seed: int = 0) -> dict:
    """P(tau_n >= t) over a ladder of t, and the scaled ratios P sqrt(t) / n."""
    if n < 1:
        raise ParameterError("n must be positive")
    ts = np.sort(np.asarray(ts, dtype=np.int64))
    T = int(ts.max())
    pos = np.zeros(trials, dtype=np.int64)
    ids = np.arange(trials)
    tau = np.full(trials, np.iinfo(np.int64).max)
    alive = np.ones(trials, dtype=bool)
    for k in range(T):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        pos[idx] += _walk_steps(seed, rng.GAMBLER + 100, ids[idx], k)
        hit = pos[idx] >= n
        tau[idx[hit]] = k + 1
        alive[idx[hit]] = False
    probs = np.array([float(np.mean(tau >= t)) for t in ts])
    ratios = probs * np.sqrt(ts) / n
    return {
        "n": n,
        "t": ts.tolist(),
        "prob": probs.tolist(),
        "ratio": ratios.tolist(),
        "fitted_constant": float(ratios.max()),
        "decreasing": bool(np.all(np.diff(probs) <= 0)),
    }


# bound checks -------------------------------------------------------------------


@dataclass
class BoundReport:
    bound_name: str
    sizes: list
    empirical_sup: list
    skipped: list
    threshold: float | None = None

    @property
    def stable(self) -> bool:
        return self.empirical_sup[-1] <= 1.5 * self.empirical_sup[0]

    @property
    def passed(self) -> bool:
        ok = self.stable
        if self.threshold is not None:
            ok = ok and max(self.empirical_sup) <= self.threshold
        return ok

    def as_dict(self) -> dict:
        return {
            "bound_name": self.bound_name,
            "sizes": list(self.sizes),
            "empirical_sup": list(self.empirical_sup),
            "skipped": list(self.skipped),
            "threshold": self.threshold,
            "stable": self.stable,
            "pass": self.passed,
        }


def _green_column(dom: BoxDomain, v) -> np.ndarray:
    return green_exact(dom, v).values


def check_green_bounds(d: int, sizes, samples: int = 20, seed: int = 0) -> list[BoundReport]:
    """Empirical constants for the Green's function bounds on Lambda_L.

    d = 1: G(v,v) / r_v over all v, and (G^v(v) - G^v(u)) / |u - v| over
    sampled pairs.  d = 2: G(v,v) / log(1 + r_v) over all v.  d = 3: for
    ``samples`` sources v, G^v(x) |x - v|^3 / (r_x r_v) over every x with
    r_v <= 2 |x - v|, and |G^v(x) - G^u(x)| |x - v|^3 / (r_x |u - v|) for a
    sampled partner u of each source.
    """
    if d not in (1, 2, 3):
        raise UnsupportedError("bounds are checked for d in {1, 2, 3}")
    sizes = list(sizes)
    reports: dict[str, BoundReport] = {}

    def add(name, L, val, skipped=0, threshold=None):
        rep = reports.setdefault(name, BoundReport(name, [], [], [], threshold))
        rep.sizes.append(L)
        rep.empirical_sup.append(float(val))
        rep.skipped.append(int(skipped))

    for L in sizes:
        dom = BoxDomain.cube(L, d)
        verts = dom.vertices()
        r = dom.boundary_distances()
        if d in (1, 2):
            diag = _green_diagonal(dom)
            if d == 1:
                add("G(v,v)/r_v", L, np.max(diag / r), threshold=2.0)
                sup = 0.0
                for s in range(samples):
                    vi = int(rng.uniform(seed, rng.GREENS_MC + 50, L, s, 0) * dom.size)
                    col = _green_column(dom, verts[vi])
                    du = np.abs(verts[:, 0] - verts[vi, 0])
                    ok = du > 0
                    diff = col[vi] - col
                    if np.any(diff < -1e-12):
                        sup = math.inf
                    sup = max(sup, float(np.max(diff[ok] / du[ok])))
                add("(G(v,v)-G^v(u))/|u-v|", L, sup)
            else:
                add("G(v,v)/log(1+r_v)", L, np.max(diag / np.log1p(r)))
        else:
            sup1 = 0.0
            sup2 = 0.0
            skip1 = 0
            for s in range(samples):
                vi = int(rng.uniform(seed, rng.GREENS_MC + 50, L, s, 0) * dom.size)
                v = verts[vi]
                col = _green_column(dom, v)
                dist = np.linalg.norm(verts - v, axis=1)
                adm = (dist > 0) & (r[vi] <= 2 * dist)
                skip1 += int(np.sum(~adm))
                sup1 = max(sup1, float(np.max(col[adm] * dist[adm] ** 3 / (r[adm] * r[vi]))))
                off = np.array([int(rng.uniform(seed, rng.GREENS_MC + 51, L, s, a) * 5) - 2 for a in range(d)])
                u = np.clip(v + off, dom.lo, dom.hi)
                if np.all(u == v):
                    u = v.copy()
                    u[0] = v[0] + 1 if v[0] < dom.hi[0] else v[0] - 1
                colu = _green_column(dom, u)
                duv = float(np.linalg.norm(u - v))
                sup2 = max(sup2, float(np.max(np.abs(col[adm] - colu[adm]) * dist[adm] ** 3 / (r[adm] * duv))))
            add("G^v(x)|x-v|^3/(r_x r_v)", L, sup1, skip1)
            add("|G^v(x)-G^u(x)||x-v|^3/(r_x|u-v|)", L, sup2, skip1)
    return list(reports.values())


def _green_diagonal(dom: BoxDomain) -> np.ndarray:
    """G(v, v) for every v (diagonal of the inverse Dirichlet matrix)."""
    A = dirichlet_matrix(dom).tocsc()
    lu = spla.splu(A)
    out = np.empty(dom.size)
    block = 256
    for s in range(0, dom.size, block):
        idx = np.arange(s, min(dom.size, s + block))
        E = np.zeros((dom.size, len(idx)))
        E[idx, np.arange(len(idx))] = 1.0
        X = lu.solve(E)
        out[idx] = X[idx, np.arange(len(idx))]
    return out


def green_mc_agreement(d: int, L: int, pairs: int = 20, walkers: int = 10_000, seed: int = 0) -> dict:
    """Compare exact and Monte Carlo G_Lambda^v(x) on random pairs in Lambda_L.

    Each pair passes iff the estimate lies within 3 standard errors.
    """
    dom = BoxDomain.cube(L, d)
    verts = dom.vertices()
    rows = []
    for p in range(pairs):
        vi, xi = (int(rng.uniform(seed, rng.GREENS_MC + 60, L, p, j) * dom.size) for j in range(2))
        v, x = verts[vi], verts[xi]
        exact = green_exact(dom, v).at(x)
        est, se = green_mc(dom, v, x, walkers, rng.substream(seed, rng.GREENS_MC + 61, L, p))
        z = abs(est - exact) / se if se > 0 else (0.0 if est == exact else math.inf)
        rows.append({"v": v.tolist(), "x": x.tolist(), "exact": exact, "estimate": est, "stderr": se,
                     "z": z, "pass": z <= 3.0})
    return {"d": d, "L": L, "rows": rows, "max_z": max(r["z"] for r in rows), "pass": all(r["pass"] for r in rows)}
