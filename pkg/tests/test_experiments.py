"""Replica orchestration, exponent fits and the statistical checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msre.disorder import make_field, rescale_lambda
from msre.errors import BudgetError, FitError, ParameterError, PreconditionError
from msre.experiments import (
    ExperimentConfig,
    ExponentFit,
    ReplicaResult,
    build_shift_pi,
    bump_profile,
    check_concentration,
    check_d1_sandwich,
    check_limit_shape_d1,
    check_scaling_relation,
    check_shift_pi,
    delocalization_fraction,
    estimate_cost,
    estimate_energy_fluct,
    estimate_transversal,
    fit_loglog,
    jackknife_std,
    linear_center_mean,
    linear_closed_form_samples,
    localization_profile,
    make_model,
    replica_seed,
    run_replicas,
    sandwich_proxies,
    step_profile,
    summarize,
)
from msre.lattice import BoxDomain, solve_dirichlet
from msre.solvers import EnergyModel, HeightGrid, affine_coefficients, energy, solve_dp_1d, solve_linear_closed_form


def fake_result(L, r, ge=0.0, center=1.0, norms=None, bands=None, d=1):
    dom = BoxDomain.cube(L, d)
    rv = dom.boundary_distances()
    norms = np.ones(dom.size) if norms is None else np.asarray(norms, float)
    return ReplicaResult(
        L=L, replica=r, seed=0, ge=ge, center_e=center, center_norm=center, gradient=float(dom.size),
        bands=bands, profile_sum=np.bincount(rv, weights=norms), profile_count=np.bincount(rv),
        norms=norms, solver="fake",
    )


def fit(slope, se, d, n=1):
    return ExponentFit(slope, 0.0, se, 1.0, [8, 16], [1, 1], [0, 0], (8, 16), {"d": d, "n": n})


# config ---------------------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = ExperimentConfig(d=2)
    assert cfg.direction == (1.0,)
    assert cfg.sizes == (8, 16, 32, 64, 128, 256)
    with pytest.raises(ParameterError):
        ExperimentConfig(d=1, sizes=(8, 8))
    with pytest.raises(ParameterError):
        ExperimentConfig(d=1, replicas=0)
    with pytest.raises(ParameterError):
        ExperimentConfig(d=1, n=2, direction=(1.0, 1.0))
    assert ExperimentConfig(d=1, n=2, direction=(0.6, 0.8)).e @ [0.6, 0.8] == pytest.approx(1.0)


# running --------------------------------------------------------------------------


def test_single_replica_is_bit_identical_across_runs():
    cfg = ExperimentConfig(d=1, sizes=(16,), replicas=1, seed=7)
    a, b = run_replicas(cfg, keep_surfaces=True), run_replicas(cfg, keep_surfaces=True)
    assert a[0].ge == b[0].ge
    assert a[0].surface.to_bytes() == b[0].surface.to_bytes()


def test_threads_do_not_change_results():
    cfg = ExperimentConfig(d=1, sizes=(8, 16), replicas=4, seed=3)
    a = run_replicas(cfg, threads=1)
    b = run_replicas(cfg, threads=3)
    assert [(r.L, r.replica, r.ge) for r in a] == [(r.L, r.replica, r.ge) for r in b]


def test_replica_seeds_are_distinct_unless_frozen():
    cfg = ExperimentConfig(d=1, sizes=(8, 16), replicas=5)
    seeds = {replica_seed(cfg, L, r) for L in cfg.sizes for r in range(5)}
    assert len(seeds) == 10
    frozen = ExperimentConfig(d=1, sizes=(8, 16), replicas=5, frozen=True)
    assert len({replica_seed(frozen, L, r) for L in frozen.sizes for r in range(5)}) == 1


def test_stored_energy_matches_surface():
    cfg = ExperimentConfig(d=1, sizes=(12,), replicas=3, seed=1)
    for r in run_replicas(cfg, keep_surfaces=True):
        model = make_model(cfg, r.L, r.seed)
        assert energy(model, r.surface) == pytest.approx(r.ge, rel=1e-9)


def test_linear_replica_energy_matches_closed_form():
    cfg = ExperimentConfig(d=1, disorder={"kind": "linear"}, sizes=(10,), replicas=5, solver="closed_form", lam=1.3)
    for r in run_replicas(cfg):
        model = make_model(cfg, r.L, r.seed)
        a, b = affine_coefficients(model.disorder, model.domain.vertices())
        x = solve_dirichlet(model.domain, a).reshape(a.shape)
        formula = -0.5 * 1.3**2 * float(np.sum(a * x)) + 1.3 * float(np.sum(b))
        assert r.ge == pytest.approx(formula, rel=1e-9)


def test_poisson_replicas_sit_on_candidates():
    cfg = ExperimentConfig(d=1, disorder={"kind": "poisson", "intensity": 4.0}, sizes=(8,), replicas=3)
    for r in run_replicas(cfg, keep_surfaces=True):
        f = make_model(cfg, r.L, r.seed).disorder
        for v, h in zip(r.surface.domain.vertices(), r.surface.interior):
            c = f.candidates(v, h - 1e-9, h + 1e-9)
            assert len(c) == 1


def test_budget_refusal_happens_before_work():
    cfg = ExperimentConfig(d=2, sizes=(64, 128), replicas=100)
    assert estimate_cost(cfg) > 1.0
    with pytest.raises(BudgetError):
        run_replicas(cfg, budget=1.0)


def test_failures_carry_size_and_replica():
    cfg = ExperimentConfig(d=1, disorder={"kind": "poisson", "intensity": 1e-9}, sizes=(4,), replicas=1,
                           grid={"W": 1.0, "step": 0.25})
    with pytest.raises(Exception, match="L=4 replica=0"):
        run_replicas(cfg)


# fitting ----------------------------------------------------------------------------


@settings(max_examples=30)
@given(perm=st.permutations(range(5)), slope=st.floats(-1, 2), c=st.floats(0.1, 10))
def test_fit_is_permutation_invariant(perm, slope, c):
    L = np.array([8, 16, 32, 64, 128])
    m = c * L**slope * (1 + 0.05 * np.sin(L))
    se = 0.01 * m
    a = fit_loglog(L, m, se)
    b = fit_loglog(L[list(perm)], m[list(perm)], se[list(perm)])
    assert a.as_dict() == b.as_dict()


@settings(max_examples=30)
@given(slope=st.floats(-1, 2), c=st.floats(0.1, 10))
def test_doubling_heights_moves_only_the_intercept(slope, c):
    L = np.array([8, 16, 32, 64])
    m = c * L**slope * (1 + 0.1 * np.cos(L))
    a = fit_loglog(L, m, 0.01 * m)
    b = fit_loglog(L, 2 * m, 0.02 * m)
    assert b.slope == pytest.approx(a.slope, abs=1e-12)
    assert b.intercept - a.intercept == pytest.approx(math.log(2), abs=1e-12)
    assert b.stderr == pytest.approx(a.stderr, abs=1e-12)


def test_fit_recovers_exact_power_law():
    L = [8, 16, 32, 64]
    f = fit_loglog(L, [3 * x**0.75 for x in L], [0.1] * 4)
    assert f.slope == pytest.approx(0.75) and f.r2 == pytest.approx(1.0)
    assert f.window == (8, 64)


def test_fit_errors():
    with pytest.raises(FitError):
        fit_loglog([8], [1.0], [0.1])
    with pytest.raises(FitError, match="L=16"):
        fit_loglog([8, 16, 32], [1.0, 0.0, 2.0], [0.1] * 3)
    with pytest.raises(FitError):
        fit_loglog([8, 16, 32], [1.0, 2.0, 3.0], [0.1] * 3, floor=32)


def test_single_size_results_cannot_be_fit():
    res = [fake_result(8, r, center=1.0 + r) for r in range(30)]
    with pytest.raises(FitError):
        estimate_transversal(res)


def test_too_few_replicas_is_a_precondition_error():
    res = [fake_result(L, r, center=1.0 + r) for L in (8, 16) for r in range(5)]
    with pytest.raises(PreconditionError):
        estimate_transversal(res)


def test_jackknife_of_normal_sample():
    x = np.random.default_rng(0).normal(size=400)
    s, se = jackknife_std(x)
    assert s == pytest.approx(1.0, abs=0.1)
    assert se == pytest.approx(1 / math.sqrt(2 * 400), rel=0.3)


def test_scaling_relation_consistent_synthetic():
    rep = check_scaling_relation(fit(2 / 3, 0.01, 1), fit(1 / 3, 0.01, 1), 1)
    assert rep["gap"] == pytest.approx(0.0, abs=1e-12) and rep["pass"]


def test_scaling_relation_detects_mismatched_configs():
    with pytest.raises(PreconditionError, match="mismatch"):
        check_scaling_relation(fit(0.5, 0.01, 2), fit(1 / 3, 0.01, 1), 2)


def test_scaling_relation_fails_far_from_relation():
    rep = check_scaling_relation(fit(0.5, 0.01, 1), fit(0.5, 0.01, 1), 1)
    assert rep["gap"] == pytest.approx(0.5) and not rep["pass"]


# linear cross-oracles -----------------------------------------------------------------


@pytest.fixture(scope="module")
def linear_run():
    cfg = ExperimentConfig(d=1, disorder={"kind": "linear"}, sizes=(16, 32, 64, 128, 256), replicas=200,
                           solver="closed_form")
    return cfg, run_replicas(cfg)


def test_linear_transversal_exponent(linear_run):
    cfg, res = linear_run
    xi = estimate_transversal(res, meta=cfg.meta())
    assert 1.45 <= xi.slope <= 1.55


def test_linear_center_mean_matches_pipeline(linear_run):
    _, res = linear_run
    for L in (16, 256):
        v = np.array([r.center_e for r in res if r.L == L])
        assert abs(v.mean() - linear_center_mean(1, L, 1.0)) <= 3 * v.std(ddof=1) / math.sqrt(len(v))


def test_linear_energy_exponent_matches_direct_sampling(linear_run):
    cfg, res = linear_run
    chi = estimate_energy_fluct(res, meta=cfg.meta())
    sizes, sds, ses = [], [], []
    for L in cfg.sizes:
        ge, _ = linear_closed_form_samples(1, L, 1.0, 200, seed=5)
        s, se = jackknife_std(ge)
        sizes.append(L)
        sds.append(s)
        ses.append(se)
    direct = fit_loglog(sizes, sds, ses)
    assert abs(chi.slope - direct.slope) <= 3 * math.hypot(chi.stderr, direct.stderr)
    assert chi.slope <= 2.0 + 3 * chi.stderr + 0.2


# lambda covariance ----------------------------------------------------------------------


def test_exponents_are_invariant_under_lambda_rescaling():
    lam = 4.0
    cfg = ExperimentConfig(d=1, sizes=(8, 16, 32), replicas=30, lam=lam)
    base = HeightGrid.symmetric(6, 0.5)
    direct, rescaled = [], []
    for L in cfg.sizes:
        for r in range(cfg.replicas):
            seed = replica_seed(cfg, L, r)
            model = make_model(cfg, L, seed)
            a = solve_dp_1d(model, base)
            other = EnergyModel(model.domain, rescale_lambda(model.disorder, lam), 1.0)
            b = solve_dp_1d(other, base.dilate(1 / math.sqrt(lam)))
            direct.append(summarize(cfg, L, r, seed, a))
            rescaled.append(summarize(cfg, L, r, seed, b))
    for est in (estimate_transversal, estimate_energy_fluct):
        fa, fb = est(direct), est(rescaled)
        assert fa.slope == pytest.approx(fb.slope, abs=1e-8)


# sandwich -------------------------------------------------------------------------------


def test_sandwich_constant_bands():
    m = 1.7
    bands = [{2**j: m for j in range(6)}] * 5
    lower, upper = sandwich_proxies(bands, 32)
    assert lower == pytest.approx(m * m)
    assert upper == pytest.approx(sum(2.0**-j * (1 + m * m) for j in range(6)))


def test_sandwich_frozen_zero_disorder_is_consistent():
    cfg = ExperimentConfig(d=1, disorder={"kind": "linear", "amplitude": 0.0}, sizes=(8, 16, 32), replicas=4,
                           frozen=True, solver="closed_form")
    rep = check_d1_sandwich(run_replicas(cfg), cfg)
    assert all(r["std"] == 0.0 and r["lower"] == 0.0 for r in rep["rows"])
    assert rep["pass"]


def test_sandwich_needs_band_maxima():
    cfg = ExperimentConfig(d=1, sizes=(8, 16), replicas=2)
    with pytest.raises(PreconditionError):
        check_d1_sandwich([fake_result(8, 0), fake_result(16, 0)], cfg)
    with pytest.raises(PreconditionError):
        check_d1_sandwich([], ExperimentConfig(d=2, sizes=(8, 16)))


def test_sandwich_white_small_ladder():
    cfg = ExperimentConfig(d=1, sizes=(16, 32, 64), replicas=40, seed=2)
    rep = check_d1_sandwich(run_replicas(cfg), cfg)
    assert rep["pass"], rep
    for row in rep["rows"]:
        assert row["lower"] <= rep["A"] * row["std"] + 1e-12
        assert row["std"] <= rep["B"] * row["upper"] + 1e-12


# limit shape ------------------------------------------------------------------------------


def test_limit_shape_zero_slope_has_zero_gap():
    cfg = ExperimentConfig(d=1, sizes=(16, 32), replicas=3)
    rep = check_limit_shape_d1(cfg, x_ladder=(0.0, 0.5))
    zero = [r for r in rep["rows"] if r["x"] == 0.0]
    assert all(r["gap"] == 0.0 for r in zero)
    assert rep["identity_residual"] <= 1e-9


def test_limit_shape_misaligned_slope():
    cfg = ExperimentConfig(d=1, sizes=(16, 32), replicas=2)
    with pytest.raises(PreconditionError, match="slope 0.3"):
        check_limit_shape_d1(cfg, x_ladder=(0.0, 0.3))


def test_limit_shape_needs_one_dimension():
    with pytest.raises(PreconditionError):
        check_limit_shape_d1(ExperimentConfig(d=2, sizes=(4, 8)))


# profiles ---------------------------------------------------------------------------------


def test_localization_profile_exact_envelope():
    res = []
    for L in (16, 32, 64):
        dom = BoxDomain.cube(L, 1)
        r = dom.boundary_distances()
        res += [fake_result(L, k, norms=2.0 * r**0.75) for k in range(3)]
    rep = localization_profile(res, 1)
    assert rep["spread"] == pytest.approx(1.0, rel=0.05)
    assert rep["pass"]


def test_localization_profile_detects_growth():
    res = []
    for L in (16, 32, 64):
        r = BoxDomain.cube(L, 1).boundary_distances()
        res.append(fake_result(L, 0, norms=L * r**0.75))
    assert not localization_profile(res, 1)["pass"]


def test_delocalization_counts_below_low_quantile():
    rng = np.random.default_rng(1)
    res = []
    for L in (8, 16):
        for k in range(5):
            dom_size = 2 * L + 1
            res.append(fake_result(L, k, center=1.0, norms=rng.exponential(size=dom_size)))
    allnorms = np.concatenate([r.norms for r in res])
    h = float(np.quantile(allnorms, 0.04))
    rep = delocalization_fraction(res, h_ladder=[h])
    for row in rep["rows"]:
        assert row["fraction"][repr(h)] >= 0.95 - 0.05
    assert rep["pass"]


def test_delocalization_floor_fails_for_flat_surfaces():
    res = [fake_result(8, k, center=2.0, norms=np.zeros(17)) for k in range(3)]
    assert not delocalization_fraction(res, d=1)["pass"]


# concentration ------------------------------------------------------------------------------


def test_concentration_frozen_disorder_has_zero_variance():
    cfg = ExperimentConfig(d=1, sizes=(8, 16), replicas=5, frozen=True)
    res = run_replicas(cfg)
    assert all(np.ptp([r.ge for r in res if r.L == L]) == 0.0 for L in cfg.sizes)
    rep = check_concentration(res, 1)
    assert rep["frozen"] and rep["pass"]


def test_concentration_small_white_run():
    cfg = ExperimentConfig(d=1, sizes=(16, 32, 64), replicas=60, seed=4)
    rep = check_concentration(run_replicas(cfg), 1)
    assert rep["var_slope"] <= 1.1
    assert rep["pass"], rep["checks"]


def test_doubling_lambda_variance_envelope():
    out = {}
    for lam in (1.0, 2.0):
        cfg = ExperimentConfig(d=1, sizes=(32,), replicas=100, lam=lam, seed=9)
        out[lam] = np.var([r.ge for r in run_replicas(cfg)], ddof=1)
    assert out[2.0] <= 4 * 1.5 * out[1.0]


# shift function -------------------------------------------------------------------------------


def test_step_profile_is_a_c2_step():
    u = np.linspace(-0.5, 1.5, 4001)
    p = step_profile(u)
    assert p[0] == 0.0 and p[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(p) >= -1e-15)
    h = u[1] - u[0]
    d2 = np.diff(p, 2) / h**2
    assert np.max(np.abs(np.diff(d2))) < 50 * h * np.max(np.abs(d2)) / h


@pytest.mark.parametrize("d", [1, 2, 3])
def test_bump_is_one_on_inner_cube_and_zero_outside(d):
    eps = 0.5
    a = 1 - eps / (3 * d)
    rng = np.random.default_rng(d)
    inner = rng.uniform(-a, a, size=(200, d))
    assert np.all(bump_profile(inner, eps, d) == 1.0)
    outer = rng.uniform(-1, 1, size=(200, d))
    outer[:, 0] = rng.choice([-1, 1], 200) * rng.uniform(1, 2, 200)
    assert np.all(bump_profile(outer, eps, d) == 0.0)


@pytest.mark.parametrize("L", [4, 8, 16, 33])
@pytest.mark.parametrize("d", [1, 2])
def test_shift_pi_origin_and_support(L, d):
    pi, rep = build_shift_pi(L, 0.99, d)
    assert rep["value_at_origin"] == 1.0
    assert rep["support_ok"] and rep["min_ok"]
    assert np.all(pi.values[pi.domain.shell_padded] == 0.0)


def test_shift_pi_energy_scaling_in_two_dimensions():
    rep = check_shift_pi((16, 32, 64), 0.99, 2)
    en = [r["energy_scaled"] for r in rep["rows"]]
    assert max(en) <= 1.5 * min(en)
    assert rep["pass"], rep["checks"]


def test_shift_pi_rejects_bad_eps():
    for eps in (0.0, 1.0, -0.1):
        with pytest.raises(ParameterError):
            build_shift_pi(8, eps, 2)
    with pytest.raises(ParameterError):
        build_shift_pi(0, 0.5, 2)


@pytest.mark.slow
def test_five_dimensional_heights_do_not_grow():
    # coarse grid: d = 5 heights stay well below one unit, so five levels suffice
    cfg = ExperimentConfig(d=5, sizes=(2, 3, 4), replicas=6, grid={"W": 0.5, "step": 0.25})
    res = run_replicas(cfg)
    f = estimate_transversal(res, "center_norm", min_replicas=6)
    # "beyond noise": the trend may exceed 0.1 only by sampling error
    assert f.slope <= 0.1 + 2 * f.stderr
    site_means = [np.mean([r.norms.mean() for r in res if r.L == L]) for L in cfg.sizes]
    assert fit_loglog(cfg.sizes, site_means, [1e-3] * 3).slope <= 0.1
