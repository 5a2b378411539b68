import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import identity_coeffs
from mlmc_elliptic import fem
from mlmc_elliptic.errors import ConvergenceError, InputError, InsufficientDataError
from mlmc_elliptic.mesh import build_hierarchy
from mlmc_elliptic.mlmc import (
    LevelStats,
    MlmcConfig,
    Problem,
    estimate_rates,
    level_study,
    mc_estimate,
    optimal_allocation,
    run_mc,
    run_mlmc,
    theoretical_cost_exponent,
    y_sample,
)
from mlmc_elliptic.oracle import brute_force_allocation
from mlmc_elliptic.qoi import QoISpec, evaluate
from mlmc_elliptic.random_field import CoefficientModel, CovarianceSpec

TINY = CoefficientModel("scalar", CovarianceSpec("gaussian", 1e-30, 0.5))


def _problem(hier3, model, qoi, **kw):
    return Problem(hier3, model, qoi, **kw)


# -- LevelStats --------------------------------------------------------------


def test_level_stats_moments():
    rng = np.random.default_rng(0)
    x = rng.normal(2.0, 3.0, 20000)
    s = LevelStats(1, 0.5)
    s.add(x, np.ones_like(x))
    assert s.mean * s.N == pytest.approx(s.sum, rel=1e-15)
    assert s.mean == pytest.approx(x.mean(), rel=1e-12)
    assert s.var == pytest.approx(x.var(ddof=1), rel=1e-9)
    assert s.cost_per_sample == 1.0
    assert s.kurtosis == pytest.approx(3.0, abs=0.15)


def test_level_stats_small_n():
    s = LevelStats(0)
    assert math.isnan(s.mean) and math.isnan(s.var)
    s.add([1.0], [1.0])
    assert math.isnan(s.var)
    s.add([1.0], [1.0])
    assert s.var == 0.0


# -- sampling ----------------------------------------------------------------


def test_zero_source_gives_zero(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, source=None, seed=3)
    for lev in range(3):
        assert y_sample(p, lev, 5)[0] == 0.0


@pytest.mark.parametrize("qoi", [QoISpec("h1_seminorm"), QoISpec("point_pressure")])
def test_deterministic_coefficient_difference(hier3, qoi):
    p = _problem(hier3, TINY, qoi, seed=1)
    q = []
    for mesh in hier3.meshes:
        A = identity_coeffs(mesh)
        sol, _, _ = fem.solve_cg(fem.assemble(mesh, A, 1.0))
        q.append(evaluate(qoi, sol, A))
    for lev in (1, 2):
        ys = [y_sample(p, lev, i)[0] for i in range(3)]
        # sigma2 = 1e-30 leaves field values of order 1e-15
        assert ys[1] == pytest.approx(ys[0], rel=1e-12) and ys[2] == pytest.approx(ys[0], rel=1e-12)
        assert ys[0] == pytest.approx(q[lev] - q[lev - 1], rel=1e-8, abs=1e-14)


def test_telescoping_pathwise(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, seed=7)
    for idx in range(5):
        g = [f[:, 0] for f in p.fields(2, [idx])]
        total = 0.0
        fields = g
        for lev in (2, 1):
            total += p.y_from_fields(lev, fields)[0]
            fields = [f[hier3.coarse_to_fine[lev - 1]] for f in fields]
        total += p.y_from_fields(0, fields)[0]
        q_fine = p.solve_level(2, g)[0]
        assert abs(total - q_fine) <= 10 * p.rel_tol * abs(q_fine)


def test_costs_positive_and_grow(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, seed=2)
    c = [np.mean(p.y_samples(lev, range(8))[1]) for lev in range(3)]
    assert all(ci > 0 for ci in c) and c[0] < c[1] < c[2]


def test_sample_reproducible_and_thread_independent(hier3, gaussian_model, h1_qoi):
    p1 = _problem(hier3, gaussian_model, h1_qoi, seed=4, threads=1, batch_size=4)
    p2 = _problem(hier3, gaussian_model, h1_qoi, seed=4, threads=3, batch_size=4)
    a = p1.y_samples(2, range(20))
    b = p2.y_samples(2, range(20))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert p1.y_sample(2, 13) == (a[0][13], a[1][13])


def test_levels_use_independent_streams(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, seed=4)
    g1 = p.fields(1, [0])[0][:, 0]
    g2 = p.fields(2, [0])[0][hier3.coarse_to_fine[1], 0]
    assert not np.allclose(g1, g2)


def test_seed_changes_samples(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, seed=4)
    assert p.y_sample(1, 0) != p.with_seed(5).y_sample(1, 0)
    assert p.with_seed(4).y_sample(1, 0) == p.y_sample(1, 0)


def test_solver_errors_annotated(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, seed=4, max_iter=1)
    with pytest.raises(ConvergenceError, match="level 2, sample 3"):
        p.y_sample(2, 3)


def test_bad_level(hier3, gaussian_model, h1_qoi):
    with pytest.raises(InputError):
        _problem(hier3, gaussian_model, h1_qoi).y_sample(3, 0)


# -- plain MC ----------------------------------------------------------------


def test_mc_constant_qoi(hier3, h1_qoi):
    p = _problem(hier3, TINY, h1_qoi)
    st = mc_estimate(p, 1, 10)
    mesh = hier3[1]
    sol, _, _ = fem.solve_cg(fem.assemble(mesh, identity_coeffs(mesh), 1.0))
    assert st.var == pytest.approx(0.0, abs=1e-20)
    assert st.mean == pytest.approx(fem.h1_seminorm(sol), rel=1e-9)
    with pytest.raises(InputError):
        mc_estimate(p, 1, 1)


def test_mc_batch_means(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, seed=8)
    n, batches = 20, 50
    vals, _ = p.q_samples(1, range(n * batches))
    means = vals.reshape(batches, n).mean(axis=1)
    st = mc_estimate(p, 1, n * batches)
    target = st.var / n
    emp = means.var(ddof=1)
    assert abs(emp - target) <= 3 * np.sqrt(2 / (batches - 1)) * target


def test_run_mc_sizing(hier3, gaussian_model, h1_qoi):
    cfg = MlmcConfig(eps=0.05, model=gaussian_model, qoi=h1_qoi, m0=2, L_max=2, N_initial=16, seed=1)
    res = run_mc(cfg, level=1, problem=cfg.make_problem())
    pilot = mc_estimate(cfg.make_problem(), 1, 16)
    assert res.stats.N >= max(16, math.ceil(2 * pilot.var / 0.05**2))
    assert res.variance_estimate <= 0.05**2 / 2


# -- allocation --------------------------------------------------------------


def test_allocation_examples():
    assert list(optimal_allocation([3.0], [2.0], 0.1)) == [math.ceil(2 * 3.0 / 0.01)]
    N = optimal_allocation([4.0, 1.0], [1.0, 4.0], 1.0)
    assert list(N) == [16, 4]
    assert 4 / 16 + 1 / 4 == 0.5
    assert list(optimal_allocation([0.0, 1.0], [1.0, 1.0], 0.5))[0] == 2


@pytest.mark.parametrize("V,C", [([1.0], [0.0]), ([1.0, 1.0], [1.0, -2.0]), ([-1.0], [1.0])])
def test_allocation_rejects(V, C):
    with pytest.raises(InputError):
        optimal_allocation(V, C, 0.1)


@settings(max_examples=60, deadline=None)
@given(
    V=st.lists(st.floats(0.0, 5.0), min_size=1, max_size=3),
    C=st.lists(st.floats(0.1, 10.0), min_size=3, max_size=3),
    eps=st.floats(0.05, 2.0),
)
def test_allocation_meets_budget(V, C, eps):
    C = C[: len(V)]
    N = optimal_allocation(V, C, eps)
    assert np.all(N >= 2)
    assert np.sum(np.array(V) / N) <= eps**2 / 2


GRIDS = [
    ([4.0, 1.0], [1.0, 4.0], 1.0),
    ([3.0, 1.0, 0.2], [1.0, 2.0, 4.0], 0.9),
    ([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], 0.5),
    ([2.0, 0.5, 0.1], [1.0, 4.0, 16.0], 0.6),
    ([1.0, 0.3], [2.0, 3.0], 0.4),
    ([0.5, 0.0, 0.2], [1.0, 5.0, 10.0], 0.5),
]


@pytest.mark.parametrize("V,C,eps", GRIDS)
def test_allocation_near_exhaustive_optimum(V, C, eps):
    opt = brute_force_allocation(V, C, eps, N_cap=200)
    N = optimal_allocation(V, C, eps)
    c_opt, c_n = float(opt @ C), float(N @ np.array(C))
    assert c_opt <= c_n + 1e-9
    assert c_n <= c_opt + max(C)


# -- rate fits ---------------------------------------------------------------


def _synthetic(alpha=1.0, beta=2.0, gamma=2.0, n=5):
    out = []
    for lev in range(n):
        m = 3.0 * 2.0 ** (-alpha * lev)
        d = math.sqrt(2.0 ** (-beta * lev) / 2)
        s = LevelStats(lev, 2.0**-lev)
        s.add([m + d, m - d], [2.0 ** (gamma * lev)] * 2)
        out.append(s)
    return out


def test_rates_exact_synthetic():
    fit = estimate_rates(_synthetic())
    assert fit.alpha == pytest.approx(1.0, abs=1e-12)
    assert fit.beta == pytest.approx(2.0, abs=1e-10)
    assert fit.gamma == pytest.approx(2.0, abs=1e-12)
    assert fit.levels == [1, 2, 3, 4]
    assert fit.beta_is_twice_alpha


def test_rates_need_three_levels():
    with pytest.raises(InsufficientDataError):
        estimate_rates(_synthetic(n=3))


def test_rates_reject_zero_variance():
    levels = _synthetic()
    levels[2] = LevelStats(2, 0.25)
    levels[2].add([1.0, 1.0], [1.0, 1.0])
    with pytest.raises(InsufficientDataError):
        estimate_rates(levels)


def test_level_study_shape(hier3, gaussian_model, h1_qoi):
    p = _problem(hier3, gaussian_model, h1_qoi, seed=1)
    levels = level_study(p, [0, 1, 2], 6)
    assert [s.level for s in levels] == [0, 1, 2] and all(s.N == 6 for s in levels)


# -- cost regimes ------------------------------------------------------------


def test_cost_exponents():
    r = theoretical_cost_exponent(1.0, 2.0, 2.1)
    assert r.mlmc_exponent == pytest.approx(2.1) and r.mc_exponent == pytest.approx(4.1)
    r = theoretical_cost_exponent(1.0, 2.0, 3.1)
    assert r.mlmc_exponent == pytest.approx(3.1) and r.mc_exponent == pytest.approx(5.1)
    r = theoretical_cost_exponent(1.0, 2.0, 2.0)
    assert r.regime == "beta=gamma" and r.log_factor and r.mlmc_exponent == 2.0
    r = theoretical_cost_exponent(2.0, 4.0, 3.0)
    assert r.regime == "beta>gamma" and r.mlmc_exponent == 2.0


def test_cost_hypothesis_checked():
    with pytest.raises(InputError):
        theoretical_cost_exponent(0.5, 2.0, 3.0)
    with pytest.raises(InputError):
        theoretical_cost_exponent(1.0, 0.0, 3.0)


# -- adaptive driver ---------------------------------------------------------


def test_config_eps_limit(gaussian_model, h1_qoi):
    with pytest.raises(InputError, match="e\\^-1"):
        MlmcConfig(eps=0.4, model=gaussian_model, qoi=h1_qoi)
    with pytest.raises(InputError):
        MlmcConfig(eps=0.1, model=gaussian_model, qoi=h1_qoi, L_min=3, L_max=2)


def test_run_mlmc_degenerate():
    cfg = MlmcConfig(eps=0.01, model=TINY, qoi=QoISpec("h1_seminorm"), m0=2, L_max=3, N_initial=2, source=None)
    res = run_mlmc(cfg)
    assert not res.bias_unmet
    assert [s.N for s in res.levels] == [2, 2]
    assert res.variance_estimate == 0.0 and res.estimate == 0.0


def test_run_mlmc_budgets(gaussian_model, h1_qoi):
    cfg = MlmcConfig(eps=0.05, model=gaussian_model, qoi=h1_qoi, m0=2, L_max=3, N_initial=16, seed=5)
    res = run_mlmc(cfg)
    assert res.variance_estimate <= cfg.eps**2 / 2 * (1 + 1e-12)
    if not res.bias_unmet:
        assert res.bias_estimate <= cfg.eps / math.sqrt(2)
    assert res.estimate == pytest.approx(sum(s.mean for s in res.levels))
    assert res.total_cost == pytest.approx(sum(s.cost_sum for s in res.levels))


def test_run_mlmc_bias_unmet(gaussian_model, h1_qoi):
    cfg = MlmcConfig(eps=0.02, model=gaussian_model, qoi=h1_qoi, m0=2, L_min=0, L_max=1, N_initial=8, seed=5)
    res = run_mlmc(cfg)
    assert res.bias_unmet and res.L == 1


def test_estimator_variance_additivity(hier3, gaussian_model, h1_qoi):
    base = _problem(hier3, gaussian_model, h1_qoi, seed=0)
    N = [12, 6]
    reps = 150
    est = []
    var_terms = []
    for r in range(reps):
        p = base.with_seed(1000 + r)
        total, vt = 0.0, 0.0
        for lev, n in enumerate(N):
            y, _ = p.y_samples(lev, range(n))
            total += y.mean()
            vt += y.var(ddof=1) / n
        est.append(total)
        var_terms.append(vt)
    predicted = np.mean(var_terms)
    emp = np.var(est, ddof=1)
    assert abs(emp - predicted) <= 3 * np.sqrt(2 / (reps - 1)) * predicted
