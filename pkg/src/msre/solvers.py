"""Finite-volume Hamiltonian and ground-state solvers.

For a box Lambda, disorder eta, lam > 0 and boundary data tau the energy of
a surface phi (equal to tau off Lambda) is

    H(phi) = 1/2 sum_{edges meeting Lambda} |phi_u - phi_v|^2
             + lam * sum_{v in Lambda} eta(v, phi_v).

Exact solvers work over a finite height grid: dynamic programming along the
chain for d = 1, and a layered min-cut for scalar heights in any dimension.
A local-search heuristic covers everything else, and linear disorder has a
closed-form minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import rng
from .disorder import DisorderField, shift
from .errors import (
    ContractError,
    IncomparableError,
    InfeasibleError,
    ParameterError,
    PreconditionError,
    ResourceError,
    UnsupportedError,
)
from .lattice import (
    BoxDomain,
    Surface,
    dirichlet_energy_of_bc,
    dirichlet_inner,
    harmonic_extension,
    inner,
    laplacian,
    solve_dirichlet,
)
from .maxflow import max_flow

EXACT_GRID = "exact-on-grid"
EXACT = "exact"
HEURISTIC = "heuristic"

MAX_STATES = 10**6
MAX_TABLE = 5 * 10**7
MAX_MINCUT_NODES = 10**8


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Domain, disorder, coupling lam and boundary data tau (zero if omitted)."""

    domain: BoxDomain
    disorder: DisorderField
    lam: float = 1.0
    tau: Surface | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterError("lam must be positive")
        if self.disorder.d != self.domain.d:
            raise ParameterError("disorder and domain dimensions differ")
        if self.tau is None:
            object.__setattr__(self, "tau", Surface.zeros(self.domain, self.disorder.n))
        else:
            if self.tau.domain != self.domain or self.tau.n != self.disorder.n:
                raise ParameterError("boundary data lives on a different domain")
            object.__setattr__(self, "tau", self.tau.boundary_only())
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self) -> int:
        return self.disorder.n

    @property
    def zero_boundary(self) -> bool:
        return not np.any(self.tau.values)

    def replace(self, **kw) -> "EnergyModel":
        return replace(self, **kw)


def hamiltonian(field: DisorderField, lam: float, phi: Surface) -> float:
    """H for surface ``phi`` on its own domain (boundary taken from phi)."""
    dom = phi.domain
    eta = field.eval(dom.vertices(), phi.interior)
    if np.any(np.isposinf(eta)):
        return math.inf
    return 0.5 * dirichlet_inner(phi, phi) + lam * float(np.sum(eta))


def _check_boundary(model: EnergyModel, phi: Surface):
    if phi.domain != model.domain or phi.n != model.n:
        raise ContractError("surface does not live on the model's domain")
    tol = 1e-12 * (1.0 + float(np.abs(model.tau.values).max(initial=0.0)))
    if not phi.matches_boundary(model.tau, tol):
        raise ContractError("surface does not match the boundary data off Lambda")


def energy(model: EnergyModel, phi: Surface) -> float:
    """H^{eta,lam,Lambda}(phi); +inf if any disorder term is infinite."""
    _check_boundary(model, phi)
    return hamiltonian(model.disorder, model.lam, phi)


def site_energies(model: EnergyModel, phi: Surface) -> np.ndarray:
    """Per-vertex split of the energy; sums to :func:`energy`.

    Each vertex gets its disorder term, half of every interior edge and all of
    every edge to the boundary.
    """
    _check_boundary(model, phi)
    dom = model.domain
    x = phi.values
    inside = dom.inside_padded
    out = np.zeros(dom.padded_shape)
    for ax in range(dom.d):
        a = [slice(None)] * dom.d
        b = [slice(None)] * dom.d
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        a, b = tuple(a), tuple(b)
        e = 0.5 * np.sum((x[b] - x[a]) ** 2, axis=-1)
        ia, ib = inside[a], inside[b]
        both = ia & ib
        out[a] += np.where(both, 0.5 * e, np.where(ia, e, 0.0))
        out[b] += np.where(both, 0.5 * e, np.where(ib, e, 0.0))
    site = out[dom.inner].reshape(-1)
    eta = model.disorder.eval(dom.vertices(), phi.interior)
    return site + model.lam * eta


# height grids ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HeightGrid:
    """Product grid ``lo + step * k`` in R^n, optionally shifted per site.

    ``site_shift`` (a Surface on the solve domain) moves the whole grid at
    vertex v by ``site_shift_v``; it is used to centre windows on boundary
    data and to transport grids through the boundary-shift identity.
    """

    lo: tuple
    hi: tuple
    step: float
    site_shift: Surface | None = None

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lo))
        hi = tuple(float(x) for x in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ParameterError("grid corners differ in dimension")
        if not self.step > 0:
            raise ParameterError("grid step must be positive")
        counts = []
        for a, b in zip(lo, hi):
            r = (b - a) / self.step
            k = round(r)
            if abs(r - k) > 1e-9 * max(1.0, abs(r)):
                raise ParameterError("grid extent is not a multiple of the step")
            if k + 1 < 3:
                raise ParameterError("grid needs at least 3 points per axis")
            counts.append(k + 1)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "counts", tuple(counts))

    @classmethod
    def symmetric(cls, W: float, step: float, n: int = 1, site_shift: Surface | None = None) -> "HeightGrid":
        """[-W', W']^n with W' the smallest multiple of ``step`` >= W, so 0 is a grid point."""
        k = math.ceil(W / step - 1e-9)
        return cls((-k * step,) * n, (k * step,) * n, step, site_shift)

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def M(self) -> int:
        return max(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def W(self) -> float:
        return max(max(abs(a) for a in self.lo), max(abs(b) for b in self.hi))

    def axis(self, a: int) -> np.ndarray:
        return self.lo[a] + self.step * np.arange(self.counts[a])

    def points(self) -> np.ndarray:
        """All grid points, (size, n), in increasing lexicographic order."""
        axes = [self.axis(a) for a in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def shifts(self, domain: BoxDomain) -> np.ndarray:
        if self.site_shift is None:
            return np.zeros((domain.size, self.n))
        if self.site_shift.domain != domain:
            raise ParameterError("grid site_shift lives on a different domain")
        return self.site_shift.interior

    def dilate(self, factor: float) -> "HeightGrid":
        s = None if self.site_shift is None else self.site_shift * factor
        return HeightGrid(
            tuple(a * factor for a in self.lo), tuple(b * factor for b in self.hi), self.step * factor, s
        )

    def widen(self, factor: float = 2.0) -> "HeightGrid":
        k = [round(-a / self.step) for a in self.lo]
        K = [round(b / self.step) for b in self.hi]
        lo = tuple(-math.ceil(factor * x) * self.step for x in k)
        hi = tuple(math.ceil(factor * x) * self.step for x in K)
        return HeightGrid(lo, hi, self.step, self.site_shift)

    def describe(self) -> dict:
        return {"W": self.W, "step": self.step, "M": self.M}


def _scale_length(domain: BoxDomain) -> float:
    return max(1.0, max(h - l + 2 for l, h in zip(domain.lo, domain.hi)) / 2.0)


def default_grid(model: EnergyModel) -> HeightGrid:
    """Window W = max(4, 4 L^{(4-d)/4} sqrt(lam)), step min(0.25, W/64).

    With nonzero boundary data the window at each vertex is centred on the
    harmonic extension rounded to the grid.
    """
    d = model.domain.d
    L = _scale_length(model.domain)
    W = max(4.0, 4.0 * L ** ((4 - d) / 4) * math.sqrt(model.lam))
    step = min(0.25, W / 64)
    s = None
    if not model.zero_boundary:
        ext = harmonic_extension(model.domain, model.tau)
        s = Surface(model.domain, step * np.round(ext.values / step))
    return HeightGrid.symmetric(W, step, model.n, s)


@dataclass
class GroundState:
    surface: Surface
    energy: float
    solver: str
    exactness: str
    grid: HeightGrid | None = None
    stats: dict = field(default_factory=dict)

    def record(self) -> dict:
        out = {"solver": self.solver, "exactness": self.exactness, "energy": self.energy}
        if self.grid is not None:
            out["grid"] = self.grid.describe()
        return out


def _finish(model, interior, solver, exactness, grid, stats) -> GroundState:
    phi = Surface.from_interior(model.domain, interior, boundary=model.tau)
    return GroundState(phi, energy(model, phi), solver, exactness, grid, stats)


def _on_window_edge(model: EnergyModel, grid: HeightGrid, phi: Surface) -> bool:
    rel = phi.interior - grid.shifts(model.domain)
    lo = np.asarray(grid.lo)
    hi = np.asarray(grid.hi)
    tol = 1e-9 * grid.step
    return bool(np.any(np.abs(rel - lo) <= tol) or np.any(np.abs(rel - hi) <= tol))


# dynamic programming (d = 1) ------------------------------------------------


@njit(cache=True)
def _envelope_rows(q, F, p):
    """out[r, x] = min_j 0.5 (p[x] - q[j])^2 + F[r, j]; q, p increasing."""
    R, K = F.shape
    P = p.shape[0]
    out = np.full((R, P), np.inf)
    v = np.empty(K, dtype=np.int64)
    z = np.empty(K + 1)
    for r in range(R):
        k = -1
        for j in range(K):
            fj = F[r, j]
            if not np.isfinite(fj):
                continue
            if k < 0:
                k = 0
                v[0] = j
                z[0] = -np.inf
                z[1] = np.inf
                continue
            gj = fj + 0.5 * q[j] * q[j]
            while True:
                i = v[k]
                s = (gj - (F[r, i] + 0.5 * q[i] * q[i])) / (q[j] - q[i])
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = j
            z[k] = s
            z[k + 1] = np.inf
        if k < 0:
            continue
        kk = 0
        for x in range(P):
            while z[kk + 1] < p[x]:
                kk += 1
            j = v[kk]
            dq = p[x] - q[j]
            out[r, x] = 0.5 * dq * dq + F[r, j]
    return out


def _grid_transform(B: np.ndarray, counts, src_axes, dst_axes) -> np.ndarray:
    """min over h' of 1/2|h - h'|^2 + B(h'), separably along each grid axis."""
    A = B.reshape(counts)
    for a in range(len(counts)):
        A = np.moveaxis(A, a, -1)
        shp = A.shape
        flat = np.ascontiguousarray(A.reshape(-1, shp[-1]))
        A = _envelope_rows(src_axes[a], flat, dst_axes[a]).reshape(shp[:-1] + (len(dst_axes[a]),))
        A = np.moveaxis(A, -1, a)
    return A.reshape(-1)


def _site_heights(model: EnergyModel, grid: HeightGrid):
    """Per-site candidate heights (m, K, n) and disorder costs (m, K)."""
    dom = model.domain
    verts = dom.vertices()
    f = model.disorder
    sh = grid.shifts(dom)
    if f.is_point_set:
        lists = [f.candidates(v, np.asarray(grid.lo) + s, np.asarray(grid.hi) + s) for v, s in zip(verts, sh)]
        K = max((len(c) for c in lists), default=0)
        if K == 0:
            raise InfeasibleError("no disorder point inside the height window at any vertex")
        H = np.zeros((len(verts), K, f.n))
        valid = np.zeros((len(verts), K), dtype=bool)
        for i, c in enumerate(lists):
            H[i, : len(c)] = c
            H[i, len(c) :] = c[-1] if len(c) else 0.0
            valid[i, : len(c)] = True
        cost = model.lam * f.eval(verts, H)
        cost[~valid] = np.inf
        return H, cost
    if grid.size > MAX_STATES:
        raise ResourceError(f"grid has {grid.size} states per site (limit {MAX_STATES})")
    if len(verts) * grid.size > MAX_TABLE:
        raise ResourceError("height table too large; shrink the grid or the box")
    H = grid.points()[None, :, :] + sh[:, None, :]
    cost = model.lam * f.evaluator(verts)(H)
    return H, cost


def solve_dp_1d(model: EnergyModel, grid: HeightGrid | None = None) -> GroundState:
    """Exact minimizer over grid-valued surfaces for d = 1.

    Backward cost-to-go with a lower-envelope distance transform, then a
    forward pass taking the first minimizing height at every site, which
    yields the lexicographically smallest optimal sequence.
    """
    dom = model.domain
    if dom.d != 1:
        raise UnsupportedError("dynamic programming needs d = 1")
    grid = grid or default_grid(model)
    H, cost = _site_heights(model, grid)
    m, K, n = H.shape
    tau_l = model.tau.lookup([[dom.lo[0] - 1]])[0]
    tau_r = model.tau.lookup([[dom.hi[0] + 1]])[0]
    gridded = not model.disorder.is_point_set
    if gridded:
        sh = grid.shifts(dom)
        axes = [grid.axis(a) for a in range(n)]
    B = np.empty((m, K))
    B[m - 1] = cost[m - 1] + 0.5 * np.sum((H[m - 1] - tau_r) ** 2, axis=-1)
    for i in range(m - 2, -1, -1):
        if gridded:
            src = [axes[a] + sh[i + 1, a] for a in range(n)]
            dst = [axes[a] + sh[i, a] for a in range(n)]
            trans = _grid_transform(B[i + 1], grid.counts, src, dst)
        else:
            d2 = 0.5 * np.sum((H[i][:, None, :] - H[i + 1][None, :, :]) ** 2, axis=-1)
            trans = np.min(d2 + B[i + 1][None, :], axis=1)
        B[i] = cost[i] + trans
    choice = np.empty(m, dtype=np.int64)
    prev = tau_l
    for i in range(m):
        vals = B[i] + 0.5 * np.sum((H[i] - prev) ** 2, axis=-1)
        j = int(np.argmin(vals))
        if not np.isfinite(vals[j]):
            raise InfeasibleError(f"every height at vertex {dom.lo[0] + i} has infinite energy")
        choice[i] = j
        prev = H[i, j]
    interior = H[np.arange(m), choice]
    return _finish(model, interior, "dp", EXACT_GRID, grid, {"states": K, "sites": m})


# min-cut (n = 1) ------------------------------------------------------------


def solve_mincut(model: EnergyModel, grid: HeightGrid | None = None) -> GroundState:
    """Exact minimizer over grid heights for scalar surfaces in any dimension.

    Layered graph: vertex p owns nodes (p, 1..M-1) and lies at label a iff
    its first a nodes are on the source side.  Pairwise terms
    1/2 (h_p - h_q)^2 have constant mixed second difference -step^2, giving
    arcs (p, i) -> (q, j) of capacity step^2 for all i, j plus unary
    corrections.  The residual-reachable source side is the minimal
    minimum cut, i.e. the pointwise lowest optimal labelling.
    """
    if model.n != 1:
        raise UnsupportedError("min-cut needs scalar heights (n = 1)")
    if model.disorder.is_point_set:
        raise UnsupportedError("point-set disorders are infinite on every grid; use dp or local search")
    dom = model.domain
    grid = grid or default_grid(model)
    N = dom.size
    M = grid.M
    if N * M > MAX_MINCUT_NODES:
        raise ResourceError(f"min-cut graph would have {N * M} nodes")
    verts = dom.vertices()
    H = grid.axis(0)[None, :] + grid.shifts(dom)[:, 0:1]
    eta = model.lam * model.disorder.evaluator(verts)(H[:, :, None])
    finite = np.isfinite(eta)
    big = 1e6 * (1.0 + N * float(np.abs(eta[finite]).max(initial=0.0)))
    U = np.where(finite, eta, big)

    # boundary edges become unary terms
    inside = dom.inside_padded
    tau = model.tau.values[..., 0]
    pad_idx = np.argwhere(inside)
    for ax in range(dom.d):
        for sgn in (-1, 1):
            nb = pad_idx.copy()
            nb[:, ax] += sgn
            out = ~inside[tuple(nb.T)]
            if out.any():
                U[out] += 0.5 * (H[out] - tau[tuple(nb[out].T)][:, None]) ** 2

    edges = dom.interior_edges()
    s2 = grid.step**2
    if len(edges):
        p, q = edges[:, 0], edges[:, 1]
        fa0 = 0.5 * (H[p] - H[q, 0:1]) ** 2 - s2 * (M - 1) * np.arange(M)[None, :]
        f0b = 0.5 * (H[p, 0:1] - H[q]) ** 2
        np.add.at(U, p, fa0)
        np.add.at(U, q, f0b)
    U = U - U.min(axis=1, keepdims=True)

    per = M - 1
    src, snk = N * per, N * per + 1
    node = np.arange(N * per).reshape(N, per)
    tails = [np.full(N, src), node[:, :-1].ravel(), node[:, -1]]
    heads = [node[:, 0], node[:, 1:].ravel(), np.full(N, snk)]
    caps = [U[:, 0], U[:, 1:-1].ravel(), U[:, -1]]
    if len(edges):
        ii, jj = np.meshgrid(np.arange(per), np.arange(per), indexing="ij")
        tails.append((node[p][:, ii.ravel()]).ravel())
        heads.append((node[q][:, jj.ravel()]).ravel())
        caps.append(np.full(len(edges) * per * per, s2))
    finite_total = float(sum(np.sum(c) for c in caps))
    inf_cap = 2.0 * finite_total + 1.0
    tails.append(node[:, 1:].ravel())
    heads.append(node[:, :-1].ravel())
    caps.append(np.full(N * (per - 1), inf_cap))
    tails = np.concatenate(tails)
    heads = np.concatenate(heads)
    caps = np.concatenate(caps)
    eps = 1e-12 * max(1.0, float(U.max()))
    res = max_flow(N * per + 2, tails, heads, caps, src, snk, eps=eps)
    labels = res.source_side[: N * per].reshape(N, per).sum(axis=1)
    if not np.all(np.isfinite(eta[np.arange(N), labels])):
        raise InfeasibleError("a clipped infinite disorder arc was cut: no finite-energy labelling")
    stats = {
        "flow": res.value,
        "phases": res.phases,
        "nodes": N * per + 2,
        "arcs": len(tails),
        "clip_cap": big,
    }
    interior = H[np.arange(N), labels][:, None]
    return _finish(model, interior, "mincut", EXACT_GRID, grid, stats)


# closed form for linear disorder --------------------------------------------


def affine_coefficients(field: DisorderField, vertices) -> tuple[np.ndarray, np.ndarray]:
    """(a_v, b_v) with eta(v, t) = a_v . t + b_v for linear-kind fields."""
    if field.kind != "linear":
        raise UnsupportedError("only linear disorder is affine in the height")
    ev = field.evaluator(vertices)
    scale = 1.0
    for kind, val in field.transforms:
        if kind == "rescale":
            scale *= math.sqrt(val)
    a = field.amplitude * scale * ev.zeta()
    b = ev(np.zeros((len(ev.vertices), 1, field.n)))[:, 0]
    return a, b


def solve_linear_closed_form(model: EnergyModel) -> GroundState:
    """phi = -lam (-Delta_Lambda)^{-1} a for eta(v, t) = a_v . t + b_v, tau = 0."""
    if not model.zero_boundary:
        raise UnsupportedError("closed form needs zero boundary data; shift the disorder by the harmonic extension")
    dom = model.domain
    a, b = affine_coefficients(model.disorder, dom.vertices())
    x = solve_dirichlet(dom, a)
    interior = -model.lam * x.reshape(dom.size, -1)
    formula = -0.5 * model.lam**2 * float(np.sum(a * x.reshape(a.shape))) + model.lam * float(np.sum(b))
    return _finish(model, interior, "closed_form", EXACT, None, {"formula_energy": formula})


def solve_linear_euler_lagrange(model: EnergyModel) -> GroundState:
    """Linear disorder with arbitrary boundary data: one solve of -Delta phi = -lam a."""
    dom = model.domain
    a, _ = affine_coefficients(model.disorder, dom.vertices())
    rhs = -model.lam * a + laplacian(model.tau).values[dom.inner].reshape(dom.size, -1)
    interior = solve_dirichlet(dom, rhs).reshape(dom.size, -1)
    return _finish(model, interior, "euler_lagrange", EXACT, None, {})


# local search ---------------------------------------------------------------

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


class _LocalSearch:
    def __init__(self, model: EnergyModel, grid: HeightGrid):
        self.model = model
        self.grid = grid
        dom = model.domain
        self.dom = dom
        f = model.disorder
        self.d = dom.d
        self.n = model.n
        inside = dom.inside_padded
        pad_idx = np.argwhere(inside)  # row-major, same order as vertices()
        parity = pad_idx.sum(axis=1) % 2
        self.classes = []
        verts = dom.vertices()
        shifts = grid.shifts(dom)
        self.affine = f.kind == "linear"
        self.point = f.is_point_set
        self.smooth = f.is_smooth
        if self.affine:
            a_all, _ = affine_coefficients(f, verts)
        for c in (0, 1):
            sel = np.flatnonzero(parity == c)
            if len(sel) == 0:
                continue
            cls = {"sel": sel, "idx": tuple(pad_idx[sel].T), "ev": f.evaluator(verts[sel]), "shift": shifts[sel]}
            if self.affine:
                cls["a"] = a_all[sel]
            elif self.point:
                lo = np.asarray(grid.lo)
                hi = np.asarray(grid.hi)
                lists = [f.candidates(v, lo + s, hi + s) for v, s in zip(verts[sel], shifts[sel])]
                K = max((len(x) for x in lists), default=0)
                P = np.zeros((len(sel), max(K, 1), self.n))
                E = np.full((len(sel), max(K, 1)), np.inf)
                for i, x in enumerate(lists):
                    P[i, : len(x)] = x
                    E[i, : len(x)] = 0.0
                cls["cand"] = P
                cls["eta"] = E
            else:
                if grid.size * len(verts) > MAX_TABLE:
                    raise ResourceError("grid table too large for local search; shrink the grid")
                pts = grid.points()
                cls["eta"] = cls["ev"](pts[None, :, :] + cls["shift"][:, None, :])
            self.classes.append(cls)
        self.axes = [grid.axis(a) for a in range(self.n)]
        self.pts = grid.points()

    def _neighbour_sum(self, X, idx):
        S = np.zeros((len(idx[0]), self.n))
        for ax in range(self.d):
            for sgn in (-1, 1):
                j = list(idx)
                j[ax] = j[ax] + sgn
                S += X[tuple(j)]
        return S

    def _eta(self, cls, h):
        return cls["ev"](h[:, None, :])[:, 0]

    def _site_delta(self, cls, m, cur, eta_cur, new, eta_new):
        d = self.d
        quad = d * (np.sum((new - m) ** 2, axis=1) - np.sum((cur - m) ** 2, axis=1))
        if self.affine:
            dis = np.sum(cls["a"] * (new - cur), axis=1)
        else:
            with np.errstate(invalid="ignore"):
                dis = eta_new - eta_cur
            dis = np.where(np.isposinf(eta_cur) & np.isfinite(eta_new), -np.inf, dis)
        return quad + self.model.lam * np.nan_to_num(dis, nan=0.0, posinf=np.inf, neginf=-np.inf)

    def _golden(self, cls, m, x):
        lam = self.model.lam
        d = self.d
        step = self.grid.step
        x = x.copy()
        for a in range(self.n):

            def obj(ta):
                y = x.copy()
                y[:, a] = ta
                return d * np.sum((y - m) ** 2, axis=1) + lam * self._eta(cls, y)

            lo = x[:, a] - step
            hi = x[:, a] + step
            c = hi - _GOLD * (hi - lo)
            e = lo + _GOLD * (hi - lo)
            fc, fe = obj(c), obj(e)
            for _ in range(40):
                left = fc < fe
                hi = np.where(left, e, hi)
                lo = np.where(left, lo, c)
                c_new = np.where(left, hi - _GOLD * (hi - lo), e)
                e_new = np.where(left, c, lo + _GOLD * (hi - lo))
                fp = obj(np.where(left, c_new, e_new))
                fc, fe = np.where(left, fp, fe), np.where(left, fc, fp)
                c, e = c_new, e_new
            x[:, a] = 0.5 * (lo + hi)
        return x

    def _update_class(self, X, cls) -> int:
        idx = cls["idx"]
        d = self.d
        lam = self.model.lam
        m = self._neighbour_sum(X, idx) / (2 * d)
        cur = X[idx]
        eta_cur = None if self.affine else self._eta(cls, cur)
        cands = []
        if self.affine:
            target = m - lam * cls["a"] / (2 * d)
            rel = (target - cls["shift"] - np.asarray(self.grid.lo)) / self.grid.step
            k = np.clip(np.ceil(rel - 0.5), 0, np.asarray(self.grid.counts) - 1)
            cands.append(np.asarray(self.grid.lo) + self.grid.step * k + cls["shift"])
            cands.append(target)
        elif self.point:
            P = cls["cand"]
            vals = d * np.sum((P - m[:, None, :]) ** 2, axis=-1) + lam * cls["eta"]
            j = np.argmin(vals, axis=1)
            cands.append(P[np.arange(len(j)), j])
        else:
            rel = m - cls["shift"]
            q = np.zeros((len(m), self.pts.shape[0]))
            for a in range(self.n):
                q += (self.pts[None, :, a] - rel[:, a : a + 1]) ** 2
            vals = d * q + lam * cls["eta"]
            j = np.argmin(vals, axis=1)
            g = self.pts[j] + cls["shift"]
            cands.append(g)
            if self.smooth:
                better = vals[np.arange(len(j)), j] <= d * np.sum((cur - m) ** 2, axis=1) + lam * eta_cur
                start = np.where(better[:, None], g, cur)
                cands.append(self._golden(cls, m, start))
        best = cur
        best_eta = eta_cur
        best_delta = np.zeros(len(cur))
        for c in cands:
            eta_c = None if self.affine else self._eta(cls, c)
            delta = self._site_delta(cls, m, cur, eta_cur, c, eta_c)
            take = delta < best_delta
            if take.any():
                best = np.where(take[:, None], c, best)
                best_delta = np.where(take, delta, best_delta)
                if not self.affine:
                    best_eta = np.where(take, eta_c, best_eta)
        moved = (best_delta < 0) & (np.max(np.abs(best - cur), axis=1) > 1e-12)
        if moved.any():
            X[tuple(i[moved] for i in idx)] = best[moved]
        return int(moved.sum())

    def run(self, X, sweeps):
        trace = [hamiltonian(self.model.disorder, self.model.lam, Surface(self.dom, X))]
        moves_total = 0
        done = 0
        for _ in range(sweeps):
            moves = 0
            for cls in self.classes:
                moves += self._update_class(X, cls)
            done += 1
            moves_total += moves
            trace.append(hamiltonian(self.model.disorder, self.model.lam, Surface(self.dom, X)))
            if moves == 0:
                break
        return X, trace, moves_total, done


def solve_local(
    model: EnergyModel,
    grid: HeightGrid | None = None,
    restarts: int = 3,
    sweeps: int = 200,
    seed: int = 0,
    init: Surface | list | None = None,
) -> GroundState:
    """Checkerboard coordinate descent with exact grid site updates.

    Each site move minimizes the one-site energy over the grid (or the
    disorder's point set) and, for continuous disorders, a refinement within
    one grid cell; a move is kept only if it strictly lowers the energy.
    Restart initial surfaces cycle through zero, the harmonic extension of
    the boundary data and uniform grid noise unless ``init`` is given.
    """
    grid = grid or default_grid(model)
    dom = model.domain
    ls = _LocalSearch(model, grid)
    if init is None:
        inits = []
        for r in range(restarts):
            kind = r % 3
            if kind == 0:
                inits.append(Surface.from_interior(dom, np.zeros((dom.size, model.n)), boundary=model.tau))
            elif kind == 1:
                inits.append(harmonic_extension(dom, model.tau))
            else:
                inits.append(_noise_init(model, grid, seed, r))
    elif isinstance(init, Surface):
        inits = [init]
    else:
        inits = list(init)
    best = None
    traces = []
    total_moves = 0
    total_sweeps = 0
    for phi0 in inits:
        _check_boundary(model, phi0)
        X = phi0.values.copy()
        X, trace, moves, done = ls.run(X, sweeps)
        traces.append(trace)
        total_moves += moves
        total_sweeps += done
        if best is None or trace[-1] < best[1]:
            best = (X, trace[-1])
    phi = Surface(dom, best[0])
    stats = {"traces": traces, "moves": total_moves, "sweeps": total_sweeps, "restarts": len(inits)}
    return GroundState(phi, energy(model, phi), "local", HEURISTIC, grid, stats)


def _noise_init(model, grid, seed, restart) -> Surface:
    dom = model.domain
    pts_idx = np.arange(dom.size)
    cols = []
    for a in range(model.n):
        u = rng.uniform(seed, rng.LOCAL_INIT, restart, pts_idx, a)
        k = np.minimum((u * grid.counts[a]).astype(np.int64), grid.counts[a] - 1)
        cols.append(grid.lo[a] + grid.step * k)
    interior = np.stack(cols, axis=-1) + grid.shifts(dom)
    return Surface.from_interior(dom, interior, boundary=model.tau)


# dispatch ---------------------------------------------------------------------

SOLVERS = ("auto", "dp", "mincut", "local", "closed_form")


def solve(model: EnergyModel, solver: str = "auto", grid: HeightGrid | None = None, **kw) -> GroundState:
    """Run a solver; with the default grid, retry once with a doubled window
    if an optimal height sits on the window edge."""
    if solver == "auto":
        if model.domain.d == 1:
            solver = "dp"
        elif model.n == 1 and not model.disorder.is_point_set:
            solver = "mincut"
        else:
            solver = "local"
    if solver == "closed_form":
        return solve_linear_closed_form(model)
    fn = {"dp": solve_dp_1d, "mincut": solve_mincut, "local": solve_local}.get(solver)
    if fn is None:
        raise ParameterError(f"unknown solver {solver!r}")
    explicit = grid is not None
    g = grid or default_grid(model)
    gs = fn(model, g, **kw)
    if explicit or model.disorder.is_point_set:
        return gs
    if _on_window_edge(model, g, gs.surface):
        g2 = g.widen(2.0)
        gs = fn(model, g2, **kw)
        gs.stats["window_retry"] = True
        gs.stats["window_saturated"] = _on_window_edge(model, g2, gs.surface)
    return gs


# identities -------------------------------------------------------------------


def main_identity_terms(field: DisorderField, lam: float, domain: BoxDomain, phi: Surface, s: Surface) -> dict:
    """The four terms of the main identity: H^eta(phi), H^{eta^s}(phi + s),
    (phi, -Delta s) and 1/2 |grad s|^2, plus the absolute residual.

    Raises :class:`IncomparableError` if either energy is infinite.
    """
    if phi.domain != domain or s.domain != domain:
        raise ContractError("phi and s must live on the given domain")
    h0 = hamiltonian(field, lam, phi)
    h1 = hamiltonian(shift(field, s), lam, phi + s)
    if not (math.isfinite(h0) and math.isfinite(h1)):
        raise IncomparableError("identity compares infinite energies")
    cross = -inner(phi, laplacian(s))
    half = 0.5 * dirichlet_inner(s, s)
    return {"h0": h0, "h1": h1, "cross": cross, "half": half, "residual": abs(h1 - h0 - cross - half)}


def verify_main_identity(field: DisorderField, lam: float, domain: BoxDomain, phi: Surface, s: Surface) -> float:
    """|H^{eta^s}(phi + s) - H^eta(phi) - (phi, -Delta s) - 1/2 |grad s|^2|."""
    return main_identity_terms(field, lam, domain, phi, s)["residual"]


@dataclass
class BoundaryShiftReport:
    surface_residual: float
    energy_residual: float
    half_de: float
    energy_tau: float
    energy_shifted: float
    solver: str

    @property
    def passed(self) -> bool:
        return self.surface_residual <= 1e-9 and self.energy_residual <= 1e-9


def _aligned_shift_grid(model: EnergyModel, grid: HeightGrid, ext: Surface) -> HeightGrid:
    dom = model.domain
    base = grid.shifts(dom)
    tb = ext.interior
    rel = (tb - base) / grid.step
    bad = np.abs(rel - np.round(rel)) > 1e-9
    if bad.any():
        i = int(np.flatnonzero(bad.any(axis=1))[0])
        v = tuple(int(x) for x in dom.vertices()[i])
        raise PreconditionError(f"harmonic extension is not grid-aligned at vertex {v}")
    shifted = Surface.from_interior(dom, base - tb)
    return HeightGrid(grid.lo, grid.hi, grid.step, shifted)


def verify_boundary_shift(model: EnergyModel, solver: str = "dp", grid: HeightGrid | None = None) -> BoundaryShiftReport:
    """Solve with boundary data tau and, independently, with zero data and
    disorder shifted by minus the harmonic extension; compare minimizers
    (after adding the extension back) and energies (after adding 1/2 DE)."""
    dom = model.domain
    ext = harmonic_extension(dom, model.tau)
    half_de = 0.5 * dirichlet_inner(ext, ext)
    shifted = EnergyModel(dom, shift(model.disorder, -ext), model.lam)
    if solver == "closed_form":
        a = solve_linear_euler_lagrange(model)
        b = solve_linear_closed_form(shifted)
    else:
        fn = {"dp": solve_dp_1d, "mincut": solve_mincut, "local": solve_local}[solver]
        grid = grid or default_grid(model)
        a = fn(model, grid)
        b = fn(shifted, _aligned_shift_grid(model, grid, ext))
    back = b.surface + ext
    scale = 1.0 + float(np.abs(a.surface.values).max())
    surf_res = float(np.abs(a.surface.values - back.values).max()) / scale
    en_res = abs(a.energy - b.energy - half_de) / (1.0 + abs(a.energy))
    return BoundaryShiftReport(surf_res, en_res, half_de, a.energy, b.energy, solver)


def de_half(domain: BoxDomain, tau) -> float:
    """1/2 ||tau||_DE^2."""
    return 0.5 * dirichlet_energy_of_bc(domain, tau)
