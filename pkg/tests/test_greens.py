"""Green's functions, potential kernel, walk estimates and bound checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msre.disorder import make_field
from msre.errors import DomainError, ParameterError, UnsupportedError
from msre.greens import (
    PotentialKernel,
    check_green_bounds,
    exit_time_tail_check,
    gambler_ruin_check,
    green_exact,
    green_mc,
    green_mc_agreement,
    potential_kernel,
    potential_kernel_series,
)
from msre.lattice import BoxDomain
from msre.solvers import EnergyModel, affine_coefficients, solve_linear_closed_form

EULER_GAMMA = 0.5772156649015329


def test_single_site_value():
    g = green_exact(BoxDomain((0,), (0,)), (0,))
    assert g.at((0,)) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("L", [3, 7, 12])
def test_one_dimensional_closed_form(L):
    # G^v(x) = (x - a)(b - v) / (b - a) for x <= v, with a, b the two boundary sites
    dom = BoxDomain.cube(L, 1)
    a, b = -L - 1, L + 1
    for v in (-L, 0, L // 2):
        g = green_exact(dom, (v,))
        for x in range(-L, L + 1):
            lo, hi = min(x, v), max(x, v)
            exact = (lo - a) * (b - hi) / (b - a)
            assert g.at((x,)) == pytest.approx(exact, rel=1e-9)


@pytest.mark.parametrize("L", [4, 16, 64])
def test_diagonal_at_most_twice_boundary_distance(L):
    dom = BoxDomain.cube(L, 1)
    r = dom.boundary_distances()
    for i, v in enumerate(dom.vertices()):
        assert green_exact(dom, v).at(v) <= 2 * r[i] + 1e-9


@pytest.mark.parametrize("d,L", [(1, 5), (2, 3), (3, 2)])
def test_table_invariants(d, L):
    dom = BoxDomain.cube(L, d)
    verts = dom.vertices()
    cols = {tuple(v): green_exact(dom, v) for v in verts[:: max(1, len(verts) // 6)]}
    for v, g in cols.items():
        assert g.residual() <= 1e-10
        assert np.all(g.values >= -1e-12)
        outside = np.array(dom.hi) + 1
        assert g.at(outside) == 0.0
        for u, h in cols.items():
            assert g.at(u) == pytest.approx(h.at(v), abs=1e-9)


def test_domain_monotonicity():
    small = BoxDomain((-2, -2), (2, 3))
    big = BoxDomain((-3, -2), (4, 5))
    for v in [(0, 0), (-2, 3), (2, 1)]:
        gs, gb = green_exact(small, v), green_exact(big, v)
        for x in small.vertices():
            assert gs.at(x) <= gb.at(x) + 1e-9


def test_exact_rejects_outside_source():
    with pytest.raises(DomainError):
        green_exact(BoxDomain.cube(2, 2), (5, 0))


# Monte Carlo ----------------------------------------------------------------------


def test_mc_single_site_is_exact():
    est, se = green_mc(BoxDomain((0,), (0,)), (0,), (0,), walkers=500)
    assert est == 0.5 and se == 0.0


def test_mc_agrees_with_exact_in_two_dimensions():
    rep = green_mc_agreement(2, 6, pairs=20, walkers=10_000, seed=0)
    assert rep["pass"], rep["max_z"]
    assert len(rep["rows"]) == 20


def test_mc_spot_check_on_larger_box():
    dom = BoxDomain.cube(8, 2)
    v, x = (1, -2), (3, 0)
    est, se = green_mc(dom, v, x, walkers=10_000, seed=4)
    assert abs(est - green_exact(dom, v).at(x)) <= 3 * se


def test_mc_preconditions():
    dom = BoxDomain.cube(2, 1)
    with pytest.raises(DomainError):
        green_mc(dom, (0,), (9,))
    with pytest.raises(ParameterError):
        green_mc(dom, (0,), (0,), walkers=10)


def test_mc_is_reproducible():
    dom = BoxDomain.cube(3, 2)
    assert green_mc(dom, (0, 0), (1, 0), 1000, seed=2) == green_mc(dom, (0, 0), (1, 0), 1000, seed=2)


# potential kernel -------------------------------------------------------------------


@pytest.mark.parametrize("x", [0, 1, -4, 7])
def test_one_dimensional_kernel_is_absolute_value(x):
    assert potential_kernel(1, (x,)) == abs(x)


def test_kernel_vanishes_at_origin():
    assert potential_kernel(2, (0, 0)) == 0.0
    assert potential_kernel_series(2, (0, 0), 50) == 0.0


def test_kernel_known_values():
    # neighbour value 1 and diagonal value 4/pi follow from harmonicity off the origin
    assert potential_kernel(2, (1, 0)) == pytest.approx(1.0, abs=1e-10)
    assert potential_kernel(2, (1, 1)) == pytest.approx(4 / math.pi, abs=1e-10)


@settings(max_examples=20)
@given(x=st.integers(-6, 6), y=st.integers(-6, 6))
def test_kernel_symmetry(x, y):
    a = potential_kernel(2, (x, y))
    assert potential_kernel(2, (-x, -y)) == a
    assert potential_kernel(2, (y, x)) == pytest.approx(a, abs=1e-10)


@pytest.mark.parametrize("x", [(2, 0), (2, 1), (3, 3)])
def test_kernel_is_harmonic_off_origin(x):
    k = PotentialKernel(2)
    nb = [(x[0] + 1, x[1]), (x[0] - 1, x[1]), (x[0], x[1] + 1), (x[0], x[1] - 1)]
    assert np.mean([k(p) for p in nb]) == pytest.approx(k(x), abs=1e-9)


def test_kernel_log_shape():
    # increments follow (2/pi) log and the offset matches (2 gamma + 3 log 2) / pi
    vals = {r: potential_kernel(2, (r, 0)) for r in (8, 16, 32)}
    for r in (8, 16):
        assert vals[2 * r] - vals[r] == pytest.approx(2 / math.pi * math.log(2), abs=2e-3)
    const = (2 * EULER_GAMMA + 3 * math.log(2)) / math.pi
    assert vals[32] - 2 / math.pi * math.log(32) == pytest.approx(const, abs=1e-3)


@pytest.mark.parametrize("x", [(1, 0), (2, 1)])
def test_truncated_series_approaches_integral(x):
    assert potential_kernel_series(2, x, 300) == pytest.approx(potential_kernel(2, x), abs=1e-2)


def test_kernel_dimension_limits():
    with pytest.raises(UnsupportedError):
        potential_kernel(3, (1, 0, 0))
    with pytest.raises(ParameterError):
        potential_kernel(2, (1,))


# walk estimates -----------------------------------------------------------------------


@pytest.mark.parametrize("n,m", [(5, 5), (1, 9), (3, 7)])
def test_gambler_ruin(n, m):
    rep = gambler_ruin_check(n, m, trials=100_000, seed=1)
    assert rep["exact"] == pytest.approx(m / (n + m))
    assert rep["pass"], rep


def test_gambler_ruin_rejects_nonpositive():
    with pytest.raises(ParameterError):
        gambler_ruin_check(0, 3, trials=100)


def test_exit_time_tail_decreases():
    rep = exit_time_tail_check(3, [10, 40, 160, 640], trials=10_000, seed=0)
    assert rep["decreasing"]
    # scaled ratios settle near sqrt(2/pi) for large t
    assert rep["ratio"][-1] == pytest.approx(math.sqrt(2 / math.pi), abs=0.08)


# bounds ---------------------------------------------------------------------------------


def test_one_dimensional_bounds():
    reps = {r.bound_name: r for r in check_green_bounds(1, [8, 32, 128], samples=10)}
    diag = reps["G(v,v)/r_v"]
    assert max(diag.empirical_sup) <= 2.0
    assert diag.passed
    assert reps["(G(v,v)-G^v(u))/|u-v|"].passed


def test_two_dimensional_log_bound():
    (rep,) = check_green_bounds(2, [8, 16, 32])
    assert rep.stable and rep.passed
    d = rep.as_dict()
    assert d["bound_name"] == "G(v,v)/log(1+r_v)" and len(d["empirical_sup"]) == 3


def test_three_dimensional_bounds():
    reps = check_green_bounds(3, [4, 8, 16], samples=5)
    assert all(r.passed for r in reps), [r.as_dict() for r in reps]


def test_bounds_reject_high_dimension():
    with pytest.raises(UnsupportedError):
        check_green_bounds(4, [4])


@pytest.mark.parametrize("w", [-4, 0, 3])
def test_green_column_feeds_linear_closed_form(w):
    # phi = -lam sum_w a_w G^w reproduces the closed-form solver
    dom = BoxDomain.cube(5, 1)
    f = make_field({"kind": "linear"}, w + 10, 1, 1)
    a, _ = affine_coefficients(f, dom.vertices())
    gs = solve_linear_closed_form(EnergyModel(dom, f, lam=0.8))
    phi = -0.8 * sum(a[i, 0] * green_exact(dom, v).values for i, v in enumerate(dom.vertices()))
    assert np.abs(gs.surface.interior[:, 0] - phi).max() <= 1e-8
