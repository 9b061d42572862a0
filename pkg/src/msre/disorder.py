"""Seeded random environments eta: Z^d x R^n -> R u {+inf}.

All randomness comes from :mod:`msre.rng`, keyed by (seed, stream, vertex,
cell), so a field is a pure function of its parameters and never needs to be
stored.  Fields are immutable; :func:`shift`, :func:`resample` and
:func:`rescale_lambda` return new handles.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special
from scipy.stats import poisson as _poisson

from . import rng
from .errors import ParameterError, UnsupportedError
from .lattice import Surface

KINDS = ("white", "poisson", "brownian", "linear", "periodic_white", "rpsg")
POINT_KINDS = frozenset({"poisson", "rpsg"})
SMOOTH_KINDS = frozenset({"white", "periodic_white", "linear", "brownian"})
POINT_TOL = 1e-12
PERIODIC_RADIUS = 0.5


def _unit_sphere_area(n: int) -> float:
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True)
class BumpFunction:
    """Radial, compactly supported bump ``b(t) = c * shape(|t|)``, unit L2 norm.

    Profiles: ``"tent"`` (1 - r) and ``"biweight"`` (1 - r^2)^2, both vanishing
    for r >= 1.
    """

    n: int = 1
    profile: str = "tent"

    def __post_init__(self):
        if self.profile not in ("tent", "biweight"):
            raise ParameterError(f"unknown bump profile {self.profile!r}")
        if self.n < 1:
            raise ParameterError("n must be >= 1")

    def _shape(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.profile == "tent":
            return np.maximum(0.0, 1.0 - r)
        return np.where(r < 1.0, (1.0 - r * r) ** 2, 0.0)

    @functools.cached_property
    def norm_const(self) -> float:
        n = self.n
        if self.profile == "tent":
            # int_0^1 (1-r)^2 r^(n-1) dr = B(n, 3)
            integral = _unit_sphere_area(n) * special.beta(n, 3)
        else:
            integral = _unit_sphere_area(n) * special.beta(n / 2, 5) / 2
        return 1.0 / math.sqrt(integral)

    @property
    def lipschitz(self) -> float:
        if self.profile == "tent":
            return self.norm_const
        return self.norm_const * 8.0 / (3.0 * math.sqrt(3.0))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        r = np.sqrt(np.sum(x * x, axis=-1))
        return self.norm_const * self._shape(r)

    def l2_norm_sq(self) -> float:
        """int b^2 by radial quadrature (independent of ``norm_const`` algebra)."""
        c = self.norm_const
        val, _ = integrate.quad(
            lambda r: (c * self._shape(r)) ** 2 * r ** (self.n - 1), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13
        )
        return _unit_sphere_area(self.n) * val


def _torus_cells(delta: float) -> int:
    """Cells per period for the periodic field (period 1 / PERIODIC_RADIUS in bump units)."""
    return round(1.0 / (PERIODIC_RADIUS * delta))


def _vertex_codes(vertices: np.ndarray) -> np.ndarray:
    cols = [vertices[:, i] for i in range(vertices.shape[1])]
    return rng.hash_keys(0, 0, *cols)


@dataclass(frozen=True, eq=False)
class DisorderField:
    """A homogeneous disorder of one of :data:`KINDS`.

    ``resampled`` holds ``(vertex codes, seed)`` overrides and ``transforms``
    holds ``("shift", Surface)`` / ``("rescale", lam)`` entries, oldest first.
    """

    kind: str
    seed: int
    d: int
    n: int
    delta: float = 0.25
    intensity: float = 1.0
    bump: BumpFunction = None
    amplitude: float = 1.0
    resampled: tuple = ()
    transforms: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown disorder kind {self.kind!r}")
        if self.kind == "brownian" and self.n != 1:
            raise UnsupportedError("Brownian disorder requires n = 1")
        if self.delta <= 0:
            raise ParameterError("delta must be positive")
        if self.kind == "periodic_white":
            m = _torus_cells(self.delta)
            if abs(m * self.delta * PERIODIC_RADIUS - 1.0) > 1e-12:
                raise ParameterError("periodic_white needs 1/(2 delta) integer")
        if self.kind == "poisson" and self.intensity <= 0:
            raise ParameterError("intensity must be positive")
        if self.bump is None:
            object.__setattr__(self, "bump", BumpFunction(self.n))
        elif self.bump.n != self.n:
            raise ParameterError("bump dimension must equal n")
        object.__setattr__(self, "seed", int(self.seed) & ((1 << 64) - 1))

    @property
    def is_point_set(self) -> bool:
        return self.kind in POINT_KINDS

    @property
    def is_smooth(self) -> bool:
        return self.kind in SMOOTH_KINDS

    def evaluator(self, vertices) -> "FieldEvaluator":
        return FieldEvaluator(self, vertices)

    def eval(self, vertices, t) -> np.ndarray:
        """eta at vertices (N, d) and heights (N, K, n) -> (N, K).

        Also accepts t of shape (N, n), returning (N,).
        """
        t = np.asarray(t, dtype=np.float64)
        single = t.ndim == 2
        ev = FieldEvaluator(self, vertices)
        out = ev(t[:, None, :] if single else t)
        return out[:, 0] if single else out

    def eval_diff(self, vertices, t_new, t_old) -> np.ndarray:
        """eta(v, t_new) - eta(v, t_old), shapes as in :meth:`eval` with K=1."""
        return FieldEvaluator(self, vertices).diff(np.asarray(t_new, float), np.asarray(t_old, float))

    def candidates(self, v, lo, hi) -> np.ndarray:
        """Points of a point-set disorder at vertex ``v`` inside the box [lo, hi]."""
        if not self.is_point_set:
            raise UnsupportedError(f"{self.kind} disorder has no candidate point set")
        return FieldEvaluator(self, np.asarray(v, dtype=np.int64).reshape(1, -1)).candidates(lo, hi)


def white_noise(seed, d, n, **kw) -> DisorderField:
    return DisorderField("white", seed, d, n, **kw)


def shift(f: DisorderField, s: Surface) -> DisorderField:
    """The shifted disorder eta^s_{v,t} = eta_{v, t - s_v}."""
    if s.n != f.n or s.domain.d != f.d:
        raise ParameterError("shift surface dimensions do not match the field")
    return replace(f, transforms=f.transforms + (("shift", s),))


def rescale_lambda(f: DisorderField, lam: float) -> DisorderField:
    """eta^lam_{v,t} = eta_{v, t sqrt(lam)}."""
    if not lam > 0:
        raise ParameterError("lambda must be positive")
    return replace(f, transforms=f.transforms + (("rescale", float(lam)),))


def resample(f: DisorderField, vertices, seed: int) -> DisorderField:
    """Replace eta on ``vertices x R^n`` by an independent copy driven by ``seed``."""
    v = np.asarray(vertices, dtype=np.int64).reshape(-1, f.d)
    if len(v) == 0:
        return f
    codes = np.unique(_vertex_codes(v))
    return replace(f, resampled=f.resampled + ((codes, int(seed) & ((1 << 64) - 1)),))


@functools.lru_cache(maxsize=64)
def _offset_table(n: int, delta: float, radius: float = 1.0):
    """Cell offsets o (relative to floor(t/delta)) that can meet the bump support."""
    R = math.ceil(radius / delta)
    offs = []
    for o in itertools.product(range(-R, R + 2), repeat=n):
        o = np.array(o)
        near = np.where(o >= 1, (o - 1) * delta, -o * delta)
        if float(np.sum(near * near)) < radius * radius:
            offs.append(o)
    return np.array(offs, dtype=np.int64)


_BATCH_CELLS = 1 << 20


class FieldEvaluator:
    """Evaluates one field on a fixed vertex list.

    Gaussian cell values for smoothed white noise are materialized on a box
    that grows on demand; since every cell value is a pure function of
    (seed, vertex, cell) the cache never changes results.
    """

    def __init__(self, f: DisorderField, vertices):
        self.f = f
        self.vertices = np.asarray(vertices, dtype=np.int64).reshape(-1, f.d)
        N = len(self.vertices)
        seeds = np.full(N, f.seed, dtype=np.uint64)
        if f.resampled:
            codes = _vertex_codes(self.vertices)
            for cset, s in f.resampled:
                seeds[np.isin(codes, cset)] = np.uint64(s)
        self.seeds = seeds
        ops = []
        for kind, obj in f.transforms:
            if kind == "shift":
                ops.append(("shift", obj.lookup(self.vertices)))
            else:
                ops.append(("scale", math.sqrt(obj)))
        self._ops = ops
        self._box = None  # (kmin, array)
        self._vcols = [self.vertices[:, i] for i in range(f.d)]

    # transforms -------------------------------------------------------
    def to_base(self, t):
        for kind, val in reversed(self._ops):
            if kind == "shift":
                t = t - val[:, None, :]
            else:
                t = t * val
        return t

    def from_base(self, t):
        for kind, val in self._ops:
            if kind == "shift":
                t = t + val[:, None, :]
            else:
                t = t / val
        return t

    # public -----------------------------------------------------------
    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 2:
            t = t[:, :, None]
        tb = self.to_base(t)
        kind = self.f.kind
        if kind == "white":
            out = self._white(tb, periodic=False)
        elif kind == "periodic_white":
            out = self._white(tb, periodic=True)
        elif kind == "linear":
            out = self.f.amplitude * np.einsum("nkj,nj->nk", tb, self.zeta())
        elif kind == "brownian":
            out = self._brownian(tb[..., 0])
        elif kind == "poisson":
            out = self._poisson_eval(tb)
        else:
            out = self._rpsg_eval(tb)
        return out

    def diff(self, t_new, t_old) -> np.ndarray:
        if t_new.ndim == 2:
            t_new = t_new[:, None, :]
            t_old = t_old[:, None, :]
        if self.f.kind == "linear":
            dt = self.to_base(t_new) - self.to_base(t_old)
            return self.f.amplitude * np.einsum("nkj,nj->nk", dt, self.zeta())[:, 0]
        return (self(t_new) - self(t_old))[:, 0]

    def zeta(self) -> np.ndarray:
        comps = np.arange(self.f.n)
        cols = [c[:, None] for c in self._vcols]
        return rng.normal(self.seeds[:, None], rng.LINEAR, *cols, comps[None, :])

    def rpsg_phase(self) -> np.ndarray:
        comps = np.arange(self.f.n)
        cols = [c[:, None] for c in self._vcols]
        return rng.uniform(self.seeds[:, None], rng.RPSG, *cols, comps[None, :])

    # smoothed white noise ----------------------------------------------
    def _cells(self, k, periodic, direct=False):
        """Gaussian cell values for integer cells k (N, K, n)."""
        f = self.f
        if periodic:
            k = np.mod(k, _torus_cells(f.delta))
        N, K, n = k.shape
        kmin = k.reshape(-1, n).min(axis=0) if k.size else np.zeros(n, dtype=np.int64)
        kmax = k.reshape(-1, n).max(axis=0) if k.size else np.zeros(n, dtype=np.int64)
        box_cells = int(np.prod(kmax - kmin + 1))
        if direct or (N * box_cells > 4 * N * K and self._box is None):
            cols = [c[:, None] for c in self._vcols]
            ks = [k[..., a] for a in range(n)]
            return rng.normal(self.seeds[:, None], rng.WHITE, *cols, *ks)
        self._ensure_box(kmin, kmax)
        bmin, box = self._box
        idx = (np.arange(N)[:, None],) + tuple(k[..., a] - bmin[a] for a in range(n))
        return box[idx]

    def _ensure_box(self, kmin, kmax):
        if self._box is not None:
            bmin, box = self._box
            bmax = bmin + np.array(box.shape[1:]) - 1
            if np.all(kmin >= bmin) and np.all(kmax <= bmax):
                return
            kmin = np.minimum(kmin, bmin)
            kmax = np.maximum(kmax, bmax)
        n = self.f.n
        N = len(self.vertices)
        axes = [np.arange(a, b + 1) for a, b in zip(kmin, kmax)]
        grids = np.meshgrid(*axes, indexing="ij")
        shape = (N,) + grids[0].shape if n else (N,)
        exp = (slice(None),) + (None,) * n
        cols = [c[exp] for c in self._vcols]
        ks = [g[None, ...] for g in grids]
        box = rng.normal(self.seeds[exp], rng.WHITE, *cols, *ks)
        self._box = (np.asarray(kmin), np.broadcast_to(box, shape))

    def _white(self, t, periodic):
        f = self.f
        delta = f.delta
        if periodic:
            # the bump is shrunk to radius r (a radius-1 tent tiles the unit
            # torus into a constant); in units of r this is the plain
            # construction on a torus of side 1/r
            t = (t - np.floor(t)) / PERIODIC_RADIUS
        k0 = np.floor(t / delta).astype(np.int64)
        acc = np.zeros(t.shape[:-1])
        offs = _offset_table(f.n, delta, 1.0)
        N, K, n = t.shape
        if self._box is None and N * K * len(offs) <= _BATCH_CELLS:
            # few heights per vertex: hash every needed cell in one call
            k = (k0[:, :, None, :] + offs).reshape(N, K * len(offs), n)
            w = f.bump(k * delta - np.repeat(t, len(offs), axis=1)).reshape(N, K, len(offs))
            c = self._cells(k, periodic, direct=True).reshape(N, K, len(offs))
            for j in range(len(offs)):
                acc += w[:, :, j] * c[:, :, j]
            return f.amplitude * math.sqrt(delta) * acc
        for o in offs:
            k = k0 + o
            w = f.bump(k * delta - t)
            if not np.any(w):
                continue
            acc += w * self._cells(k, periodic)
        return f.amplitude * math.sqrt(delta) * acc

    # Brownian ---------------------------------------------------------
    def _brownian(self, t):
        f = self.f
        delta = f.delta
        s = np.abs(t) / delta
        k = np.floor(s).astype(np.int64)
        frac = s - k
        kmax = int(k.max()) + 1 if k.size else 1
        j = np.arange(1, kmax + 1)
        cols = [c[:, None] for c in self._vcols]
        right = rng.normal(self.seeds[:, None], rng.BROWNIAN, *cols, j[None, :])
        left = rng.normal(self.seeds[:, None], rng.BROWNIAN, *cols, -j[None, :])
        sd = math.sqrt(delta)
        zero = np.zeros((len(self.vertices), 1))
        S_r = np.concatenate([zero, np.cumsum(sd * right, axis=1)], axis=1)
        S_l = np.concatenate([zero, np.cumsum(sd * left, axis=1)], axis=1)
        S = np.where(t >= 0, 1, 0)
        rows = np.arange(len(self.vertices))[:, None]
        lo_r, hi_r = S_r[rows, k], S_r[rows, np.minimum(k + 1, kmax)]
        lo_l, hi_l = S_l[rows, k], S_l[rows, np.minimum(k + 1, kmax)]
        val_r = lo_r + frac * (hi_r - lo_r)
        val_l = lo_l + frac * (hi_l - lo_l)
        return f.amplitude * np.where(S == 1, val_r, val_l)

    # point sets -------------------------------------------------------
    def _poisson_cell(self, i, cell):
        """Points of P_v in unit cell ``cell`` (C, n) for vertex rows i (C,)."""
        f = self.f
        cols = [c[i] for c in self._vcols]
        cc = [cell[:, a] for a in range(f.n)]
        u = rng.uniform(self.seeds[i], rng.POISSON_COUNT, *cols, *cc)
        counts = _poisson.ppf(u, f.intensity).astype(np.int64)
        return counts

    def _poisson_points(self, i, cell, j):
        f = self.f
        cols = [c[i] for c in self._vcols]
        cc = [cell[:, a] for a in range(f.n)]
        pts = np.stack(
            [rng.uniform(self.seeds[i], rng.POISSON_POS, *cols, *cc, j, np.full_like(j, a)) for a in range(f.n)],
            axis=-1,
        )
        return cell + pts

    def _poisson_eval(self, t):
        f = self.f
        N, K, n = t.shape
        flat = t.reshape(-1, n)
        rows = np.repeat(np.arange(N), K)
        hit = np.zeros(len(flat), dtype=bool)
        base = np.floor(flat).astype(np.int64)
        for o in itertools.product((-1, 0, 1), repeat=n):
            cell = base + np.array(o)
            counts = self._poisson_cell(rows, cell)
            for j in range(int(counts.max()) if counts.size else 0):
                m = counts > j
                if not m.any():
                    break
                p = self._poisson_points(rows[m], cell[m], np.full(int(m.sum()), j))
                close = np.all(np.abs(p - flat[m]) <= POINT_TOL, axis=1)
                hit[np.flatnonzero(m)[close]] = True
        return np.where(hit, 0.0, np.inf).reshape(N, K)

    def _rpsg_eval(self, t):
        u = self.rpsg_phase()[:, None, :]
        x = t - u
        ok = np.all(np.abs(x - np.round(x)) <= POINT_TOL, axis=-1)
        return np.where(ok, 0.0, np.inf)

    def candidates(self, lo, hi) -> np.ndarray:
        """Candidate heights for the first vertex inside the box [lo, hi]."""
        f = self.f
        n = f.n
        lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (n,))
        hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (n,))
        corners = np.array(list(itertools.product(*zip(lo, hi))))[None, :, :]
        bc = self.to_base(corners)[0]
        blo, bhi = bc.min(axis=0), bc.max(axis=0)
        if f.kind == "rpsg":
            u = self.rpsg_phase()[0]
            axes = [np.arange(math.ceil(a - ui), math.floor(b - ui) + 1) + ui for a, b, ui in zip(blo, bhi, u)]
            pts = np.array(list(itertools.product(*axes))).reshape(-1, n)
        else:
            cells = np.array(
                list(itertools.product(*[range(math.floor(a), math.floor(b) + 1) for a, b in zip(blo, bhi)]))
            ).reshape(-1, n)
            rows = np.zeros(len(cells), dtype=np.int64)
            counts = self._poisson_cell(rows, cells)
            chunks = []
            for j in range(int(counts.max()) if counts.size else 0):
                m = counts > j
                chunks.append(self._poisson_points(rows[m], cells[m], np.full(int(m.sum()), j)))
            pts = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, n))
        pts = self.from_base(pts[None, :, :])[0] if len(pts) else pts
        keep = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
        pts = pts[keep]
        order = np.lexsort(pts.T[::-1]) if len(pts) else np.zeros(0, dtype=np.int64)
        return pts[order]


def _expect(f, kind):
    if f.kind != kind:
        raise ParameterError(f"expected a {kind} field, got {f.kind}")


def _eval_one(f, v, t):
    v = np.asarray(v, dtype=np.int64).reshape(1, f.d)
    t = np.asarray(t, dtype=np.float64).reshape(1, 1, f.n)
    return float(f.eval(v, t)[0, 0])


def poisson_eval(f: DisorderField, v, t) -> float:
    _expect(f, "poisson")
    return _eval_one(f, v, t)


def poisson_candidates(f: DisorderField, v, window) -> np.ndarray:
    _expect(f, "poisson")
    return f.candidates(v, *window)


def rpsg_candidates(f: DisorderField, v, window) -> np.ndarray:
    _expect(f, "rpsg")
    return f.candidates(v, *window)


def linear_eval(f: DisorderField, v, t) -> float:
    _expect(f, "linear")
    return _eval_one(f, v, t)


def periodic_white_eval(f: DisorderField, v, t) -> float:
    _expect(f, "periodic_white")
    return _eval_one(f, v, t)


def brownian_eval(f: DisorderField, v, t) -> float:
    _expect(f, "brownian")
    return _eval_one(f, v, t)


def make_field(spec: dict, seed: int, d: int, n: int) -> DisorderField:
    """Build a field from a config disorder block."""
    hurst = spec.get("hurst")
    if hurst is not None and abs(float(hurst) - 0.5) > 1e-12:
        raise UnsupportedError("fractional Brownian disorder (hurst != 1/2) is not supported")
    bump = spec.get("bump") or {}
    if "n" in bump and int(bump["n"]) != n:
        raise ParameterError("bump.n must equal the number of components n")
    return DisorderField(
        kind=spec.get("kind", "white"),
        seed=seed,
        d=d,
        n=n,
        delta=float(spec.get("delta", 0.25)),
        intensity=float(spec.get("intensity", 1.0)),
        bump=BumpFunction(n, bump.get("profile", "tent")),
        amplitude=float(spec.get("amplitude", 1.0)),
    )
