"""Boxes in Z^d, surfaces with n components and the discrete operators on them.

A :class:`Surface` stores its values on a dense array covering the box padded
by one layer in every direction.  The padded array holds the interior
``Lambda`` and the outer shell ``Lambda^+ minus Lambda``; the shell is the set
of vertices joined by an edge to ``Lambda`` (the l1 shell, so the corners of
the padded array are not part of it and always hold zero).
"""

from __future__ import annotations

import functools
import itertools
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import DomainError, SolverError

MAGIC = b"MSRE"
FORMAT_VERSION = 1
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``{lo_1..hi_1} x ... x {lo_d..hi_d}``."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(int(x) for x in self.lo)
        hi = tuple(int(x) for x in self.hi)
        if len(lo) != len(hi) or not lo:
            raise DomainError("lo and hi must have the same positive length")
        if any(a > b for a, b in zip(lo, hi)):
            raise DomainError(f"empty box: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, L: int, d: int) -> "BoxDomain":
        """The box Lambda_L = {-L, ..., L}^d."""
        if L < 0:
            raise DomainError("L must be non-negative")
        return cls((-L,) * d, (L,) * d)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def padded_shape(self) -> tuple[int, ...]:
        return tuple(s + 2 for s in self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def inner(self) -> tuple[slice, ...]:
        """Slices selecting Lambda inside a padded array."""
        return (slice(1, -1),) * self.d

    def contains(self, v) -> bool:
        v = tuple(int(x) for x in v)
        return len(v) == self.d and all(a <= x <= b for a, x, b in zip(self.lo, v, self.hi))

    def vertices(self) -> np.ndarray:
        """All vertices of Lambda in row-major order, shape (|Lambda|, d)."""
        axes = [np.arange(a, b + 1) for a, b in zip(self.lo, self.hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    def padded_vertices(self) -> np.ndarray:
        axes = [np.arange(a - 1, b + 2) for a, b in zip(self.lo, self.hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1).astype(np.int64)

    def index_of(self, v) -> int:
        if not self.contains(v):
            raise DomainError(f"vertex {tuple(v)} not in box")
        return int(np.ravel_multi_index(tuple(int(x) - a for x, a in zip(v, self.lo)), self.shape))

    @functools.cached_property
    def inside_padded(self) -> np.ndarray:
        m = np.zeros(self.padded_shape, dtype=bool)
        m[self.inner] = True
        return m

    @functools.cached_property
    def plus_padded(self) -> np.ndarray:
        """Mask of Lambda^+ on the padded array."""
        inside = self.inside_padded
        m = inside.copy()
        for ax in range(self.d):
            lo = [slice(None)] * self.d
            hi = [slice(None)] * self.d
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            m[tuple(lo)] |= inside[tuple(hi)]
            m[tuple(hi)] |= inside[tuple(lo)]
        return m

    @functools.cached_property
    def shell_padded(self) -> np.ndarray:
        return self.plus_padded & ~self.inside_padded

    def shell_vertices(self) -> np.ndarray:
        return self.padded_vertices()[self.shell_padded]

    def boundary_distance(self, v) -> int:
        """l_inf distance from ``v`` to the complement of the box."""
        if not self.contains(v):
            raise DomainError(f"vertex {tuple(v)} not in box")
        return min(min(x - a + 1, b - x + 1) for a, x, b in zip(self.lo, v, self.hi))

    def boundary_distances(self) -> np.ndarray:
        """r_v for every vertex, row-major."""
        v = self.vertices()
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.minimum(v - lo + 1, hi - v + 1).min(axis=1)

    def interior_edges(self) -> np.ndarray:
        """Pairs of flat indices (p, q), p < q, of nearest neighbours inside Lambda."""
        idx = np.arange(self.size).reshape(self.shape)
        out = []
        for ax in range(self.d):
            a = [slice(None)] * self.d
            b = [slice(None)] * self.d
            a[ax] = slice(0, -1)
            b[ax] = slice(1, None)
            out.append(np.stack([idx[tuple(a)].ravel(), idx[tuple(b)].ravel()], axis=1))
        return np.concatenate(out, axis=0) if out else np.zeros((0, 2), dtype=np.int64)


class Surface:
    """A map Z^d -> R^n supported on Lambda^+ of a box.

    ``values`` is the padded array of shape ``domain.padded_shape + (n,)``.
    """

    __slots__ = ("domain", "n", "values")

    def __init__(self, domain: BoxDomain, values: np.ndarray):
        values = np.array(values, dtype=np.float64)
        if values.ndim == domain.d:
            values = values[..., None]
        if values.shape[:-1] != domain.padded_shape:
            raise DomainError(f"values shape {values.shape} does not match box {domain.padded_shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("surface values must be finite")
        values[~domain.plus_padded] = 0.0
        values.setflags(write=False)
        self.domain = domain
        self.n = values.shape[-1]
        self.values = values

    @classmethod
    def zeros(cls, domain: BoxDomain, n: int) -> "Surface":
        return cls(domain, np.zeros(domain.padded_shape + (n,)))

    @classmethod
    def from_interior(cls, domain: BoxDomain, interior, boundary: "Surface | None" = None) -> "Surface":
        interior = np.asarray(interior, dtype=np.float64)
        if interior.ndim == 1:
            interior = interior[:, None]
        n = interior.shape[-1]
        vals = np.zeros(domain.padded_shape + (n,)) if boundary is None else boundary.values.copy()
        vals[domain.inner] = interior.reshape(domain.shape + (n,))
        return cls(domain, vals)

    @classmethod
    def from_function(cls, domain: BoxDomain, n: int, f) -> "Surface":
        """Evaluate ``f(vertices) -> (N, n)`` on Lambda^+."""
        pv = domain.padded_vertices()
        mask = domain.plus_padded
        vals = np.zeros(domain.padded_shape + (n,))
        vals[mask] = np.asarray(f(pv[mask]), dtype=np.float64).reshape(-1, n)
        return cls(domain, vals)

    @property
    def interior(self) -> np.ndarray:
        return self.values[self.domain.inner].reshape(-1, self.n).copy()

    def boundary_only(self) -> "Surface":
        vals = self.values.copy()
        vals[self.domain.inner] = 0.0
        return Surface(self.domain, vals)

    def lookup(self, vertices) -> np.ndarray:
        """Values at arbitrary vertices (N, d); zero off Lambda^+."""
        v = np.asarray(vertices, dtype=np.int64).reshape(-1, self.domain.d)
        rel = v - np.asarray(self.domain.lo) + 1
        ok = np.all((rel >= 0) & (rel < np.asarray(self.domain.padded_shape)), axis=1)
        out = np.zeros((len(v), self.n))
        if ok.any():
            out[ok] = self.values[tuple(rel[ok].T)]
        return out

    def matches_boundary(self, other: "Surface", tol: float = 0.0) -> bool:
        m = self.domain.shell_padded
        return bool(np.all(np.abs(self.values[m] - other.values[m]) <= tol))

    def _check(self, other):
        if not isinstance(other, Surface) or other.domain != self.domain or other.n != self.n:
            raise DomainError("surfaces live on different domains or component counts")

    def __add__(self, other):
        self._check(other)
        return Surface(self.domain, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return Surface(self.domain, self.values - other.values)

    def __neg__(self):
        return Surface(self.domain, -self.values)

    def __mul__(self, c: float):
        return Surface(self.domain, self.values * float(c))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Surface(lo={self.domain.lo}, hi={self.domain.hi}, n={self.n})"

    # binary layout: see module-level MAGIC
    def to_bytes(self) -> bytes:
        dom = self.domain
        head = MAGIC + struct.pack("<I", FORMAT_VERSION)
        head += struct.pack(f"<qq{dom.d}q{dom.d}q", dom.d, self.n, *dom.lo, *dom.hi)
        body = np.ascontiguousarray(self.interior, dtype="<f8").tobytes()
        shell = dom.shell_padded
        verts = dom.padded_vertices()[shell]
        vals = self.values[shell]
        keep = np.any(vals != 0.0, axis=1)
        recs = [struct.pack("<Q", int(keep.sum()))]
        fmt = f"<{dom.d}q{self.n}d"
        for v, x in zip(verts[keep], vals[keep]):
            recs.append(struct.pack(fmt, *v.tolist(), *x.tolist()))
        return head + body + b"".join(recs)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Surface":
        if buf[:4] != MAGIC:
            raise ValueError("not an MSRE surface file")
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported surface format version {version}")
        off = 8
        d, n = struct.unpack_from("<qq", buf, off)
        off += 16
        lo = struct.unpack_from(f"<{d}q", buf, off)
        off += 8 * d
        hi = struct.unpack_from(f"<{d}q", buf, off)
        off += 8 * d
        dom = BoxDomain(lo, hi)
        count = dom.size * n
        interior = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(-1, n)
        off += 8 * count
        (nrec,) = struct.unpack_from("<Q", buf, off)
        off += 8
        vals = np.zeros(dom.padded_shape + (n,))
        fmt = f"<{d}q{n}d"
        step = struct.calcsize(fmt)
        for _ in range(nrec):
            rec = struct.unpack_from(fmt, buf, off)
            off += step
            rel = tuple(int(x) - a + 1 for x, a in zip(rec[:d], lo))
            vals[rel] = rec[d:]
        vals[dom.inner] = interior.reshape(dom.shape + (n,))
        return cls(dom, vals)


def _edge_slices(d: int, ax: int):
    a = [slice(None)] * d
    b = [slice(None)] * d
    a[ax] = slice(0, -1)
    b[ax] = slice(1, None)
    return tuple(a), tuple(b)


def laplacian(phi: Surface) -> Surface:
    """Delta_Lambda phi: sum over edges meeting Lambda of (phi_u - phi_v)."""
    dom = phi.domain
    x = phi.values
    inside = dom.inside_padded
    out = np.zeros_like(x)
    for ax in range(dom.d):
        a, b = _edge_slices(dom.d, ax)
        diff = (x[b] - x[a]) * (inside[a] | inside[b])[..., None]
        out[a] += diff
        out[b] -= diff
    return Surface(dom, out)


def dirichlet_inner(phi: Surface, psi: Surface) -> float:
    """(grad phi, grad psi)_Lambda summed over edges meeting Lambda."""
    phi._check(psi)
    dom = phi.domain
    inside = dom.inside_padded
    total = 0.0
    for ax in range(dom.d):
        a, b = _edge_slices(dom.d, ax)
        meets = inside[a] | inside[b]
        dphi = phi.values[b] - phi.values[a]
        dpsi = psi.values[b] - psi.values[a]
        total += float(np.sum(np.sum(dphi * dpsi, axis=-1)[meets]))
    return total


def inner(phi: Surface, psi: Surface) -> float:
    """(phi, psi) over all of Z^d (both vanish off Lambda^+)."""
    phi._check(psi)
    return float(np.sum(phi.values * psi.values))


@functools.lru_cache(maxsize=32)
def dirichlet_matrix(domain: BoxDomain) -> sp.csr_matrix:
    """-Delta_Lambda restricted to functions vanishing off Lambda (SPD)."""
    mats = []
    for k in domain.shape:
        mats.append(sp.diags([-np.ones(k - 1), 2 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1], format="csr"))
    A = sp.csr_matrix((domain.size, domain.size))
    for i, T in enumerate(mats):
        term = sp.identity(1, format="csr")
        for j, k in enumerate(domain.shape):
            term = sp.kron(term, T if i == j else sp.identity(k, format="csr"), format="csr")
        A = A + term
    return A.tocsr()


def solve_dirichlet(domain: BoxDomain, rhs, tol: float = RESIDUAL_TOL) -> np.ndarray:
    """Solve (-Delta_Lambda) x = rhs on Lambda with zero data outside.

    Conjugate gradients per column; iteration cap 20 |Lambda|.
    """
    A = dirichlet_matrix(domain)
    rhs = np.asarray(rhs, dtype=np.float64)
    squeeze = rhs.ndim == 1
    B = rhs.reshape(domain.size, -1)
    X = np.zeros_like(B)
    for j in range(B.shape[1]):
        b = B[:, j]
        if not np.any(b):
            continue
        scale = max(1.0, float(np.abs(b).max()))
        x, _ = cg(A, b, rtol=1e-14, atol=1e-13 * scale, maxiter=20 * domain.size)
        res = float(np.abs(A @ x - b).max())
        if res > tol * scale:
            raise SolverError(f"linear solve did not converge: residual {res:.3e}")
        X[:, j] = x
    return X[:, 0] if squeeze else X


def harmonic_extension(domain: BoxDomain, tau) -> Surface:
    """The function equal to tau off Lambda and harmonic (Delta_Lambda = 0) on Lambda.

    ``tau`` is a Surface on ``domain`` (only its shell is read) or a callable
    mapping vertices (N, d) to values (N, n).
    """
    if not isinstance(tau, Surface):
        probe = np.asarray(tau(domain.vertices()[:1]), dtype=np.float64)
        tau = Surface.from_function(domain, probe.reshape(1, -1).shape[1], tau)
    shell = tau.boundary_only()
    rhs = laplacian(shell).values[domain.inner].reshape(domain.size, -1)
    x = solve_dirichlet(domain, rhs)
    return Surface.from_interior(domain, x, boundary=shell)


def dirichlet_energy_of_bc(domain: BoxDomain, tau) -> float:
    """||tau||_DE^2: Dirichlet energy of the harmonic extension of tau."""
    ext = harmonic_extension(domain, tau)
    return dirichlet_inner(ext, ext)


def neighbours(d: int) -> np.ndarray:
    out = []
    for ax, sgn in itertools.product(range(d), (-1, 1)):
        e = np.zeros(d, dtype=np.int64)
        e[ax] = sgn
        out.append(e)
    return np.array(out)
