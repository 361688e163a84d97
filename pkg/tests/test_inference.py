import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from ggmix.effect_prior import EffectComponent, EffectMixtureSpec, EffectPrior
from ggmix.inference import (
    adaptive_threshold,
    decide,
    decide_from_lfdr,
    discretize_variance_distribution,
    lfdr_from_priors,
)
from ggmix.pipeline import run_ggmix
from ggmix.simlab import ScenarioConfig, oracle_priors, simulate_dataset, variance_distribution
from ggmix.variance_prior import SummaryTable, VarianceGrid, VariancePrior

N = EffectComponent.normal
U = EffectComponent.uniform


def brute_force_threshold(lfdr, alpha):
    """Enumerate every prefix of the sorted values."""
    srt = sorted(lfdr)
    best = 0
    for t in range(1, len(srt) + 1):
        if sum(srt[:t]) / t <= alpha:
            best = t
    if best == 0:
        return 0.0, 0
    tau = srt[best - 1]
    return tau, sum(v <= tau for v in lfdr)


def small_problem(pi0):
    vprior = VariancePrior(VarianceGrid(np.array([0.5, 2.0])), [0.4, 0.6])
    spec = EffectMixtureSpec("custom", (N(1, 2), U(-3, 0)))
    rest = (1 - pi0) / 2
    return vprior, EffectPrior(spec, [pi0, rest, rest])


def test_lfdr_extremes():
    tab = SummaryTable(np.linspace(-4, 4, 9), np.linspace(0.5, 3, 9), 6)
    for pi0, expected in [(1.0, 1.0), (0.0, 0.0)]:
        vp, ep = small_problem(pi0)
        assert np.all(lfdr_from_priors(tab, vp, ep) == expected)


def test_lfdr_single_hypothesis_closed_form():
    tab = SummaryTable([0.0], [1.0], 10)
    vp = VariancePrior(VarianceGrid(np.array([1.0])), [1.0])
    ep = EffectPrior(EffectMixtureSpec("custom", (N(0, 3),)), [0.5, 0.5])
    assert lfdr_from_priors(tab, vp, ep)[0] == pytest.approx(2 / 3, rel=1e-14)


def test_lfdr_in_unit_interval():
    vp, ep = small_problem(0.7)
    tab = SummaryTable(np.linspace(-40, 40, 81), np.full(81, 0.01), 3)
    lfdr = lfdr_from_priors(tab, vp, ep)
    assert np.all((lfdr >= 0) & (lfdr <= 1))


def test_threshold_examples():
    assert adaptive_threshold([0.02, 0.05, 0.2], 0.1) == (0.2, 3)
    assert adaptive_threshold([0.3, 0.5, 0.2], 0.1) == (0.0, 0)
    assert adaptive_threshold([0.0, 0.0, 1.0], 0.1) == (0.0, 2)
    assert adaptive_threshold([], 0.1) == (0.0, 0)
    with pytest.raises(ValueError):
        adaptive_threshold([0.1], 1.0)


def test_ties_are_rejected_together():
    # running means 0.02, 0.06, 0.0867, 0.1: t = 3, but the two later ties share the threshold
    lfdr = np.array([0.14, 0.02, 0.14, 0.1, 0.14])
    assert adaptive_threshold(lfdr, 0.09) == (0.14, 5)
    assert decide_from_lfdr(lfdr, 0.09).delta.all()


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0]) | st.floats(0, 1),
                min_size=1, max_size=60),
       st.floats(0.001, 0.999))
def test_threshold_matches_enumeration(lfdr, alpha):
    tau, count = adaptive_threshold(lfdr, alpha)
    ref_tau, ref_count = brute_force_threshold(lfdr, alpha)
    assert count == ref_count
    if count:
        assert tau == ref_tau


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 0.5))
def test_decision_monotone_and_consistent(lfdr, alpha):
    lfdr = np.array(lfdr)
    report = decide_from_lfdr(lfdr, alpha)
    rejected = lfdr[report.delta]
    kept = lfdr[~report.delta]
    if rejected.size and kept.size:
        assert rejected.max() < kept.min()
    if report.rejected_count:
        assert np.array_equal(report.delta, lfdr <= report.tau_star)
    else:
        assert report.tau_star == 0.0


def test_decide_small_cases():
    assert decide_from_lfdr(np.array([0.05]), 0.1).rejected_count == 1
    vp, ep = small_problem(1.0)
    tab = SummaryTable([10.0, -12.0, 0.1], [0.1, 0.1, 0.1], 5)
    assert decide(tab, vp, ep, 0.1).rejected_count == 0


def test_pipeline_is_deterministic():
    tab, _ = simulate_dataset(ScenarioConfig("g2", "f1", 0.8, m=5000, seed=3), 0)
    a = run_ggmix(tab)
    b = run_ggmix(tab)
    assert np.array_equal(a.report.delta, b.report.delta)
    assert np.array_equal(a.report.lfdr, b.report.lfdr)
    assert a.report.rejected_count > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 10_000))
def test_location_scale_equivariance(c, seed):
    rng = np.random.default_rng(seed)
    m = 40
    x = rng.normal(0, 3, m)
    s2 = rng.uniform(0.2, 4, m)
    kappa = np.geomspace(0.1, 8, 6)
    delta = rng.dirichlet(np.ones(6))
    comps = (N(1.5, 2.0), N(0, 9), U(-2, 0), U(-1, 3))
    pi = rng.dirichlet(np.ones(5))
    base = lfdr_from_priors(SummaryTable(x, s2, 7), VariancePrior(VarianceGrid(kappa), delta),
                            EffectPrior(EffectMixtureSpec("custom", comps), pi))
    scaled_comps = tuple(
        N(k.mean * c, k.variance * c * c) if k.kind == "normal" else U(k.lower * c, k.upper * c)
        for k in comps)
    scaled = lfdr_from_priors(SummaryTable(x * c, s2 * c * c, 7),
                              VariancePrior(VarianceGrid(kappa * c * c), delta),
                              EffectPrior(EffectMixtureSpec("custom", scaled_comps), pi))
    assert_allclose(scaled, base, rtol=1e-10, atol=1e-12)


def test_discretized_variance_prior_is_a_distribution():
    prior = discretize_variance_distribution(stats.invgamma(3, scale=3))
    assert prior.grid.L == 512
    assert abs(prior.delta.sum() - 1) < 1e-12
    assert np.all(np.diff(prior.grid.kappa) > 0)
    mean = prior.delta @ prior.grid.kappa
    assert mean == pytest.approx(1.5, rel=5e-3)


def test_oracle_lfdr_matches_quadrature_over_continuous_prior():
    cfg = ScenarioConfig("g1", "f1", 0.8, nu=10)
    vprior, eprior = oracle_priors(cfg)
    g = variance_distribution("g1")
    x = np.array([0.3, 1.5, -3.0, 5.0, 0.0, 8.0])
    s2 = np.array([0.2, 1.0, 2.5, 0.6, 5.0, 1.0])
    lfdr = lfdr_from_priors(SummaryTable(x, s2, 10), vprior, eprior)

    def npdf(v, var):
        return math.exp(-v * v / (2 * var)) / math.sqrt(2 * math.pi * var)

    for xi, si, li in zip(x, s2, lfdr):
        w = lambda v: stats.gamma.pdf(si, 5, scale=v / 5) * g.pdf(v)
        null = integrate.quad(lambda v: npdf(xi, v) * w(v), 0, np.inf, epsrel=1e-12, limit=500)[0]
        alt = integrate.quad(lambda v: npdf(xi, v + 16) * w(v), 0, np.inf, epsrel=1e-12, limit=500)[0]
        ref = 0.8 * null / (0.8 * null + 0.2 * alt)
        assert li == pytest.approx(ref, abs=1e-5)
