"""Discrete variance prior: grid construction, NPMLE fit and posterior weights."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .numkernel import gamma_logpdf, logsumexp
from .solver import SolverOptions, fit_mixture

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SummaryTable:
    """Observed effect estimates ``x`` and variance estimates ``s2`` on ``nu`` df."""

    x: np.ndarray
    s2: np.ndarray
    nu: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        s2 = np.asarray(self.s2, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("summary table is empty")
        if x.shape != s2.shape:
            raise ValueError(f"x has {x.size} entries but s2 has {s2.size}")
        if not np.all(np.isfinite(x)):
            raise ValueError("x contains non-finite values")
        if not np.all(np.isfinite(s2)) or np.any(s2 <= 0):
            bad = np.flatnonzero(~(s2 > 0) | ~np.isfinite(s2))[:10]
            raise ValueError(f"s2 must be positive and finite (bad rows: {bad.tolist()})")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ValueError("nu must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s2", s2)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def m(self):
        return self.x.size


@dataclass(frozen=True)
class VarianceGrid:
    """Support points of the discrete variance prior.

    :func:`build_variance_grid` always returns strictly increasing points;
    the type itself only requires positive finite values so that permuted or
    duplicated grids can be fitted too.
    """

    kappa: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=float).ravel()
        if kappa.size < 1 or not np.all(np.isfinite(kappa)) or np.any(kappa <= 0):
            raise ValueError("variance grid must hold positive finite points")
        object.__setattr__(self, "kappa", kappa)

    @property
    def L(self):
        return self.kappa.size


@dataclass(frozen=True)
class VariancePrior:
    grid: VarianceGrid
    delta: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float).ravel()
        if delta.shape != self.grid.kappa.shape:
            raise ValueError("delta and grid differ in length")
        if np.any(delta < 0) or abs(delta.sum() - 1.0) > 1e-10:
            raise ValueError("delta must lie on the simplex")
        object.__setattr__(self, "delta", delta)

    @property
    def support(self):
        """Indices of grid points with positive mass."""
        return np.flatnonzero(self.delta > 0)


def empirical_quantile(values, q):
    """Order statistic at 1-based index ``ceil(q * n)`` (at least the minimum)."""
    v = np.sort(np.asarray(values, dtype=float))
    idx = max(1, math.ceil(q * v.size))
    return float(v[min(idx, v.size) - 1])


def build_variance_grid(s2, L=50):
    """Log-spaced grid from the 1% quantile of ``s2`` to its maximum."""
    s2 = np.asarray(s2, dtype=float)
    if s2.size == 0:
        raise ValueError("s2 is empty")
    if L < 1:
        raise ValueError("L must be at least 1")
    a = empirical_quantile(s2, 0.01)
    b = float(s2.max())
    if a <= 0:
        raise ValueError("s2 must be positive")
    if L == 1:
        return VarianceGrid(np.array([a]), degenerate=True)
    if a == b:
        logger.warning("all s2 equal; variance grid collapses to a single point")
        return VarianceGrid(np.array([a]), degenerate=True)
    kappa = np.geomspace(a, b, L)
    kappa[0], kappa[-1] = a, b
    return VarianceGrid(kappa)


def s2_likelihood_matrix(tab, grid):
    """``A[i, l] = log Gamma(s2_i; nu/2, nu/(2 kappa_l))``."""
    half = 0.5 * tab.nu
    return gamma_logpdf(tab.s2[:, None], half, half / grid.kappa[None, :])


def fit_variance_prior(tab, grid, opts=None):
    """Maximum marginal likelihood estimate of the grid weights."""
    opts = opts or SolverOptions()
    if tab.m < grid.L:
        logger.warning("fewer observations (%d) than grid points (%d)", tab.m, grid.L)
    fit = fit_mixture(s2_likelihood_matrix(tab, grid), opts=opts)
    return VariancePrior(grid, fit.weights, fit.diagnostics())


@dataclass(frozen=True)
class PosteriorGrid:
    """Row-stochastic posterior weights of each variance grid point.

    ``weights`` and ``log_weights`` are restricted to the prior's support
    (columns ``support`` of the full grid); the other columns are exactly zero.
    """

    log_weights: np.ndarray
    kappa: np.ndarray
    support: np.ndarray
    L: int

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def full(self):
        out = np.zeros((self.log_weights.shape[0], self.L))
        out[:, self.support] = self.weights
        return out


def posterior_variance_weights(tab, prior):
    support = prior.support
    grid = VarianceGrid(prior.grid.kappa[support])
    # zero-weight grid points have zero posterior weight and are skipped
    logpost = np.log(prior.delta[support])[None, :] + s2_likelihood_matrix(tab, grid)
    norm = logsumexp(logpost, axis=1)
    if np.any(~np.isfinite(norm)):
        bad = np.flatnonzero(~np.isfinite(norm))[:10]
        raise ValueError(f"s2 values impossible under the variance prior: rows {bad.tolist()}")
    return PosteriorGrid(logpost - norm[:, None], grid.kappa, support, prior.grid.L)


def marginal_s2_density(s2, prior, nu):
    """Fitted marginal density of ``s2`` under the discrete prior."""
    half = 0.5 * nu
    s2 = np.asarray(s2, dtype=float)
    logs = gamma_logpdf(s2[..., None], half, half / prior.grid.kappa)
    with np.errstate(divide="ignore"):
        return np.exp(logsumexp(logs + np.log(prior.delta), axis=-1))
