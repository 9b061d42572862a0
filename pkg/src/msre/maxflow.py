"""Dinic max-flow on a static arc list, compiled with numba.

Capacities are floats.  A residual capacity at or below ``eps`` counts as
saturated, which keeps the source side of the returned cut stable under
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass
class FlowResult:
    value: float
    source_side: np.ndarray  # bool per node
    residual: np.ndarray  # residual capacity per input arc
    phases: int


@njit(cache=True)
def _bfs(s, t, start, to, res, eps, level, queue):
    level[:] = -1
    level[s] = 0
    qh = 0
    qt = 0
    queue[qt] = s
    qt += 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for a in range(start[u], start[u + 1]):
            v = to[a]
            if level[v] < 0 and res[a] > eps:
                level[v] = level[u] + 1
                queue[qt] = v
                qt += 1
    return level[t] >= 0


@njit(cache=True)
def _blocking_flow(s, t, start, to, rev, res, eps, level, it, path, nodes):
    total = 0.0
    top = 0
    u = s
    nodes[0] = s
    while True:
        if u == t:
            b = np.inf
            for k in range(top):
                if res[path[k]] < b:
                    b = res[path[k]]
            first = -1
            for k in range(top):
                a = path[k]
                res[a] -= b
                res[rev[a]] += b
                if first < 0 and res[a] <= eps:
                    first = k
            total += b
            top = first
            u = nodes[top]
            continue
        found = False
        while it[u] < start[u + 1]:
            a = it[u]
            v = to[a]
            if res[a] > eps and level[v] == level[u] + 1:
                found = True
                break
            it[u] += 1
        if found:
            a = it[u]
            path[top] = a
            top += 1
            u = to[a]
            nodes[top] = u
        else:
            level[u] = -1
            if top == 0:
                break
            top -= 1
            u = nodes[top]
            it[u] += 1
    return total


@njit(cache=True)
def _dinic(n, s, t, start, to, rev, res, eps):
    level = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    it = np.empty(n, dtype=np.int64)
    path = np.empty(n + 1, dtype=np.int64)
    nodes = np.empty(n + 1, dtype=np.int64)
    flow = 0.0
    phases = 0
    while _bfs(s, t, start, to, res, eps, level, queue):
        phases += 1
        for u in range(n):
            it[u] = start[u]
        flow += _blocking_flow(s, t, start, to, rev, res, eps, level, it, path, nodes)
    # residual reachability from s gives the source-minimal minimum cut
    _bfs(s, t, start, to, res, eps, level, queue)
    return flow, level >= 0, phases


def max_flow(n_nodes: int, tails, heads, caps, s: int, t: int, eps: float | None = None) -> FlowResult:
    """Maximum s-t flow and the source-minimal minimum cut.

    Parameters
    ----------
    n_nodes : int
    tails, heads : int arrays of arc endpoints
    caps : nonnegative float capacities
    s, t : source and sink node ids
    eps : saturation threshold; defaults to ``1e-12 * max(1, max cap)``
    """
    tails = np.asarray(tails, dtype=np.int64)
    heads = np.asarray(heads, dtype=np.int64)
    caps = np.asarray(caps, dtype=np.float64)
    if np.any(caps < 0) or not np.all(np.isfinite(caps)):
        raise ValueError("capacities must be finite and nonnegative")
    E = len(tails)
    if eps is None:
        eps = 1e-12 * max(1.0, float(caps.max()) if E else 1.0)
    all_t = np.concatenate([tails, heads])
    all_h = np.concatenate([heads, tails])
    all_c = np.concatenate([caps, np.zeros(E)])
    order = np.argsort(all_t, kind="stable")
    pos = np.empty(2 * E, dtype=np.int64)
    pos[order] = np.arange(2 * E)
    to = all_h[order]
    res = all_c[order].copy()
    partner = np.concatenate([np.arange(E, 2 * E), np.arange(E)])
    rev = pos[partner][order]
    start = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(start, all_t + 1, 1)
    start = np.cumsum(start)
    value, side, phases = _dinic(n_nodes, s, t, start, to, rev, res, eps)
    return FlowResult(float(value), side, res[pos[:E]], int(phases))
