import logging

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from ggmix.solver import _Problem, em_iterations
from ggmix.variance_prior import (
    SummaryTable,
    VarianceGrid,
    VariancePrior,
    build_variance_grid,
    empirical_quantile,
    fit_variance_prior,
    marginal_s2_density,
    posterior_variance_weights,
    s2_likelihood_matrix,
)


def chi2_table(rng, m, nu, sigma2=1.0):
    s2 = np.asarray(sigma2) * rng.chisquare(nu, m) / nu
    return SummaryTable(rng.normal(size=m), s2, nu)


def test_summary_table_validation():
    with pytest.raises(ValueError):
        SummaryTable([], [], 3)
    with pytest.raises(ValueError):
        SummaryTable([1.0, 2.0], [1.0], 3)
    with pytest.raises(ValueError):
        SummaryTable([1.0], [0.0], 3)
    with pytest.raises(ValueError):
        SummaryTable([1.0], [1.0], 0)
    with pytest.raises(ValueError):
        SummaryTable([np.inf], [1.0], 2)
    assert SummaryTable([1, 2], [3, 4], 5).m == 2


def test_grid_three_points():
    grid = build_variance_grid(np.array([0.25, 1.0, 4.0]), 3)
    assert_allclose(grid.kappa, [0.25, 1.0, 4.0], rtol=1e-15)


def test_grid_degenerate_all_equal(caplog):
    with caplog.at_level(logging.WARNING):
        grid = build_variance_grid(np.full(10, 2.5), 50)
    assert grid.kappa.tolist() == [2.5]
    assert grid.degenerate
    assert "single point" in caplog.text


def test_grid_endpoints_are_quantile_and_max():
    rng = np.random.default_rng(0)
    s2 = rng.chisquare(10, 10_000) / 10
    grid = build_variance_grid(s2, 50)
    assert grid.L == 50
    assert grid.kappa[0] == np.sort(s2)[99]  # ceil(0.01 * 10000) = 100th smallest
    assert grid.kappa[-1] == s2.max()
    ratios = grid.kappa[1:] / grid.kappa[:-1]
    assert_allclose(ratios, ratios[0], rtol=1e-12)
    assert np.all(np.diff(grid.kappa) > 0)


def test_grid_single_point_mode():
    grid = build_variance_grid(np.array([3.0, 1.0, 2.0]), 1)
    assert grid.kappa.tolist() == [1.0]


def test_empirical_quantile_order_statistic():
    v = np.arange(1, 201, dtype=float)[::-1]
    assert empirical_quantile(v, 0.01) == 2.0
    assert empirical_quantile(v, 0.99) == 198.0
    assert empirical_quantile([5.0], 0.01) == 5.0


def test_grid_rejects_invalid_points():
    with pytest.raises(ValueError):
        VarianceGrid(np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        VarianceGrid(np.array([]))


def test_likelihood_matrix_exponential_case():
    tab = SummaryTable([0.0], [1.0], 2)
    A = s2_likelihood_matrix(tab, VarianceGrid(np.array([1.0])))
    assert A[0, 0] == pytest.approx(-1.0, abs=1e-15)


def test_likelihood_matrix_matches_scaled_chi2_density():
    # s2 = kappa * V / nu with V ~ chi2_nu, density by change of variables
    mp.mp.dps = 40
    rng = np.random.default_rng(1)
    for nu in (1.5, 4, 10, 64):
        tab = chi2_table(rng, 6, nu)
        kappa = np.array([0.2, 1.0, 7.5])
        A = s2_likelihood_matrix(tab, VarianceGrid(kappa))
        for i, s in enumerate(tab.s2):
            for j, k in enumerate(kappa):
                v = mp.mpf(s) * nu / k
                dens = (mp.mpf(nu) / k) * v ** (mp.mpf(nu) / 2 - 1) * mp.exp(-v / 2) / (
                    2 ** (mp.mpf(nu) / 2) * mp.gamma(mp.mpf(nu) / 2))
                assert A[i, j] == pytest.approx(float(mp.log(dens)), rel=1e-10)


def test_likelihood_column_is_a_density_in_s2():
    nu, kappa = 7.0, 2.3
    grid = VarianceGrid(np.array([kappa]))
    f = lambda s: np.exp(s2_likelihood_matrix(SummaryTable([0.0], [s], nu), grid)[0, 0])
    total, _ = integrate.quad(f, 0, np.inf, epsrel=1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)
    half = integrate.quad(f, 0, 3.0, epsrel=1e-12)[0]
    assert half == pytest.approx(stats.chi2.cdf(3.0 * nu / kappa, nu), rel=1e-10)


def test_fit_single_point_grid():
    rng = np.random.default_rng(2)
    prior = fit_variance_prior(chi2_table(rng, 20, 5), VarianceGrid(np.array([1.0])))
    assert prior.delta.tolist() == [1.0]
    assert prior.diagnostics["iterations"] == 0


def test_fit_concentrates_near_point_mass():
    rng = np.random.default_rng(3)
    tab = chi2_table(rng, 5000, 64)
    grid = build_variance_grid(tab.s2, 50)
    prior = fit_variance_prior(tab, grid)
    near = np.abs(grid.kappa - 1.0) <= 0.25
    assert prior.delta[near].sum() >= 0.95
    assert prior.diagnostics["converged"] and prior.diagnostics["kkt_gap"] <= 1e-6
    # long-run EM oracle on the same matrix
    problem = _Problem(s2_likelihood_matrix(tab, grid))
    _, em = em_iterations(problem, np.full(50, 1 / 50), 100_000)
    assert em[near].sum() >= 0.95
    assert prior.diagnostics["objective"] >= problem.objective(em) - 1e-9


def test_fit_duplicate_grid_point():
    rng = np.random.default_rng(4)
    tab = chi2_table(rng, 1000, 8, rng.choice([1.0, 4.0], 1000))
    kappa = np.geomspace(0.3, 12, 15)
    base = fit_variance_prior(tab, VarianceGrid(kappa))
    dup = fit_variance_prior(tab, VarianceGrid(np.insert(kappa, 7, kappa[7])))
    assert dup.diagnostics["objective"] == pytest.approx(base.diagnostics["objective"], abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_fit_invariant_under_grid_permutation(seed):
    rng = np.random.default_rng(seed)
    tab = chi2_table(rng, 800, 6, rng.choice([0.5, 3.0], 800))
    grid = build_variance_grid(tab.s2, 20)
    perm = rng.permutation(20)
    a = fit_variance_prior(tab, grid)
    b = fit_variance_prior(tab, VarianceGrid(grid.kappa[perm]))
    assert b.diagnostics["objective"] == pytest.approx(a.diagnostics["objective"], abs=1e-8)
    assert b.diagnostics["kkt_gap"] <= 1e-6


def test_fit_warns_when_fewer_rows_than_grid_points(caplog):
    rng = np.random.default_rng(5)
    tab = chi2_table(rng, 10, 4)
    with caplog.at_level(logging.WARNING):
        fit_variance_prior(tab, build_variance_grid(tab.s2, 20))
    assert "fewer observations" in caplog.text


def test_fitted_marginal_integrates_to_one():
    rng = np.random.default_rng(6)
    tab = chi2_table(rng, 2000, 10, rng.choice([1.0, 10.0], 2000))
    prior = fit_variance_prior(tab, build_variance_grid(tab.s2, 50))
    total, _ = integrate.quad(lambda s: marginal_s2_density(s, prior, 10), 0, np.inf,
                              epsrel=1e-10, limit=500, points=None)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_posterior_single_point_and_symmetric_grid():
    rng = np.random.default_rng(7)
    tab = chi2_table(rng, 30, 5)
    one = posterior_variance_weights(tab, VariancePrior(VarianceGrid(np.array([2.0])), [1.0]))
    assert np.all(one.weights == 1.0)
    two = posterior_variance_weights(tab, VariancePrior(VarianceGrid(np.array([2.0, 2.0])), [0.5, 0.5]))
    assert_allclose(two.weights, 0.5, rtol=1e-15)


def test_posterior_matches_high_precision_normalisation():
    mp.mp.dps = 50
    rng = np.random.default_rng(8)
    tab = chi2_table(rng, 20, 7, rng.uniform(0.2, 5, 20))
    kappa = np.array([0.1, 0.7, 1.5, 4.0, 20.0])
    delta = rng.dirichlet(np.ones(5))
    post = posterior_variance_weights(tab, VariancePrior(VarianceGrid(kappa), delta)).full()
    half = mp.mpf(7) / 2
    for i, s in enumerate(tab.s2):
        terms = [mp.mpf(d) * (half / k) ** half * mp.mpf(s) ** (half - 1) * mp.exp(-half / k * s)
                 / mp.gamma(half) for d, k in zip(delta, kappa)]
        tot = mp.fsum(terms)
        assert_allclose(post[i], [float(t / tot) for t in terms], rtol=1e-12, atol=1e-300)


def test_posterior_restricted_to_support():
    rng = np.random.default_rng(9)
    tab = chi2_table(rng, 10, 4)
    prior = VariancePrior(VarianceGrid(np.array([0.5, 1.0, 2.0])), [0.5, 0.0, 0.5])
    post = posterior_variance_weights(tab, prior)
    assert post.support.tolist() == [0, 2]
    assert np.all(post.full()[:, 1] == 0)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(1e-4, 1e4), min_size=1, max_size=30),
    st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8),
    st.floats(0.5, 100),
    st.integers(0, 2**32 - 1),
)
def test_posterior_rows_are_stochastic(s2, kappa, nu, seed):
    delta = np.random.default_rng(seed).dirichlet(np.ones(len(kappa)))
    prior = VariancePrior(VarianceGrid(np.array(kappa)), delta)
    post = posterior_variance_weights(SummaryTable(np.zeros(len(s2)), s2, nu), prior)
    w = post.full()
    assert np.all(w >= 0)
    assert_allclose(w.sum(axis=1), 1.0, atol=1e-10)


def test_variance_prior_validation():
    with pytest.raises(ValueError):
        VariancePrior(VarianceGrid(np.array([1.0, 2.0])), [0.7, 0.7])
    with pytest.raises(ValueError):
        VariancePrior(VarianceGrid(np.array([1.0, 2.0])), [1.0])
