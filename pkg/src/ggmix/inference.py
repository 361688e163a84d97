"""Local false discovery rates, the adaptive threshold and the rejection set."""

from dataclasses import dataclass, field

import numpy as np

from .effect_prior import conditional_density_matrix
from .numkernel import logsumexp
from .variance_prior import VarianceGrid, VariancePrior, posterior_variance_weights

ORACLE_GRID_SIZE = 512


def lfdr_from_matrix(bmat, pi):
    """``pi0 * exp(B0) / sum_k pi_k * exp(Bk)`` evaluated in log space."""
    b = bmat.b if hasattr(bmat, "b") else np.asarray(bmat)
    pi = np.asarray(pi, dtype=float)
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    keep = pi > 0
    if not keep[0]:
        return np.zeros(b.shape[0])
    num = logpi[0] + b[:, 0]
    den = logsumexp(b[:, keep] + logpi[keep], axis=1)
    return np.clip(np.exp(num - den), 0.0, 1.0)


def density_matrix_for(tab, vprior, spec):
    post = posterior_variance_weights(tab, vprior)
    return conditional_density_matrix(tab, post, vprior.grid, spec)


def lfdr_from_priors(tab, vprior, eprior):
    return lfdr_from_matrix(density_matrix_for(tab, vprior, eprior.spec), eprior.pi)


def adaptive_threshold(lfdr, alpha):
    """Largest prefix of sorted Lfdr values whose running mean stays within ``alpha``.

    Returns ``(tau_star, rejected_count)``; every hypothesis with
    ``lfdr <= tau_star`` is rejected, so ties at the threshold go together.
    ``tau_star`` is 0 with no rejections when no prefix qualifies.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lfdr = np.asarray(lfdr, dtype=float)
    if lfdr.size == 0:
        return 0.0, 0
    srt = np.sort(lfdr)
    ok = np.cumsum(srt) <= alpha * np.arange(1, srt.size + 1)
    if not ok.any():
        return 0.0, 0
    t = int(np.flatnonzero(ok)[-1]) + 1
    tau = float(srt[t - 1])
    return tau, int(np.count_nonzero(lfdr <= tau))


@dataclass(frozen=True)
class DecisionReport:
    lfdr: np.ndarray
    tau_star: float
    delta: np.ndarray
    alpha: float
    pi0_hat: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def rejected_count(self):
        return int(self.delta.sum())

    @property
    def rejected(self):
        return np.flatnonzero(self.delta)


def decide_from_lfdr(lfdr, alpha, pi0_hat=float("nan"), diagnostics=None):
    tau, count = adaptive_threshold(lfdr, alpha)
    delta = lfdr <= tau if count else np.zeros(len(lfdr), dtype=bool)
    return DecisionReport(np.asarray(lfdr), tau, delta, alpha, pi0_hat, diagnostics or {})


def decide(tab, vprior, eprior, alpha=0.1):
    lfdr = lfdr_from_priors(tab, vprior, eprior)
    diag = {"variance_prior": vprior.diagnostics, "effect_prior": eprior.diagnostics}
    return decide_from_lfdr(lfdr, alpha, eprior.pi0, diag)


def discretize_variance_distribution(dist, n=ORACLE_GRID_SIZE, lo_q=1e-4, hi_q=1 - 1e-4):
    """Discrete stand-in for a continuous variance distribution.

    Grid points are log-spaced between the ``lo_q`` and ``hi_q`` quantiles of
    the frozen scipy distribution ``dist``; each point receives the mass of
    the cell between the geometric midpoints to its neighbours, with the
    outer cells absorbing the tails.
    """
    kappa = np.geomspace(dist.ppf(lo_q), dist.ppf(hi_q), n)
    edges = np.sqrt(kappa[:-1] * kappa[1:])
    cdf = np.concatenate([[0.0], dist.cdf(edges), [1.0]])
    delta = np.diff(cdf)
    delta = np.clip(delta, 0.0, None)
    return VariancePrior(VarianceGrid(kappa), delta / delta.sum())
