"""Dinic max-flow against scipy's integer max-flow and brute-force cuts."""

import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_flow

from msre.maxflow import max_flow


def _random_graph(rng, n, density):
    tails, heads = np.nonzero(rng.random((n, n)) < density)
    keep = tails != heads
    tails, heads = tails[keep], heads[keep]
    caps = rng.integers(1, 20, size=len(tails)).astype(float)
    return tails, heads, caps


def _scipy_value(n, tails, heads, caps, s, t):
    # scipy wants int32 capacities and merges parallel arcs by summing
    m = sp.csr_matrix((caps.astype(np.int32), (tails, heads)), shape=(n, n))
    m.sum_duplicates()
    return maximum_flow(m, s, t).flow_value


@pytest.mark.parametrize("seed", range(12))
def test_matches_scipy_on_random_integer_graphs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    tails, heads, caps = _random_graph(rng, n, 0.2)
    res = max_flow(n, tails, heads, caps, 0, n - 1)
    assert res.value == pytest.approx(_scipy_value(n, tails, heads, caps, 0, n - 1), abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_cut_is_minimal_source_side(seed):
    rng = np.random.default_rng(100 + seed)
    n = 8
    tails, heads, caps = _random_graph(rng, n, 0.35)
    # many equal capacities so several minimum cuts exist
    caps = np.ceil(caps / 10.0)
    res = max_flow(n, tails, heads, caps, 0, n - 1)
    best = np.inf
    minimal = None
    for bits in itertools.product((0, 1), repeat=n - 2):
        side = np.array((1,) + bits + (0,), dtype=bool)
        cut = caps[side[tails] & ~side[heads]].sum()
        if cut < best - 1e-12:
            best, minimal = cut, side
        elif abs(cut - best) <= 1e-12:
            minimal = minimal & side
    assert res.value == pytest.approx(best)
    # the intersection of all minimum source sides is itself a minimum cut
    np.testing.assert_array_equal(res.source_side, minimal)


def test_flow_conservation_and_capacity():
    rng = np.random.default_rng(7)
    n = 30
    tails, heads, caps = _random_graph(rng, n, 0.15)
    res = max_flow(n, tails, heads, caps, 0, n - 1)
    flow = caps - res.residual
    assert np.all(flow >= -1e-12) and np.all(flow <= caps + 1e-12)
    net = np.zeros(n)
    np.add.at(net, tails, -flow)
    np.add.at(net, heads, flow)
    assert np.allclose(net[1:-1], 0.0)
    assert net[-1] == pytest.approx(res.value)


def test_disconnected_sink_gives_zero():
    res = max_flow(4, [0, 1], [1, 0], [3.0, 2.0], 0, 3)
    assert res.value == 0.0
    assert list(res.source_side) == [True, True, False, False]


def test_rejects_negative_or_infinite_capacity():
    with pytest.raises(ValueError):
        max_flow(2, [0], [1], [-1.0], 0, 1)
    with pytest.raises(ValueError):
        max_flow(2, [0], [1], [np.inf], 0, 1)
