"""P-value baselines: BH on t-statistics, IS-style conditional p-values, Storey-BH."""

import numpy as np

from .numkernel import normal_sf, student_t_two_sided_pvalue
from .variance_prior import posterior_variance_weights


def t_pvalues(tab):
    """Two-sided p-values of ``x / s`` against ``t_nu``."""
    return student_t_two_sided_pvalue(tab.x / np.sqrt(tab.s2), tab.nu)


def conditional_pvalues(tab, vprior):
    """Two-sided p-values from the null law of ``x`` given ``s2`` under ``vprior``.

    ``p_i = 2 * sum_l w_il * (1 - Phi(|x_i| / sqrt(kappa_l)))`` with ``w_il``
    the posterior weights of the variance grid.
    """
    post = posterior_variance_weights(tab, vprior)
    z = np.abs(tab.x)[:, None] / np.sqrt(post.kappa)[None, :]
    p = 2.0 * np.sum(post.weights * normal_sf(z), axis=1)
    return np.clip(p, 0.0, 1.0)


def bh(p, alpha=0.1, pi0=1.0):
    """Benjamini-Hochberg step-up; ``pi0 < 1`` gives Storey's adaptive variant.

    Returns a boolean rejection mask.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0 < pi0 <= 1:
        raise ValueError("pi0 must lie in (0, 1]")
    p = np.asarray(p, dtype=float)
    m = p.size
    reject = np.zeros(m, dtype=bool)
    if m == 0:
        return reject
    order = np.argsort(p, kind="stable")
    below = p[order] <= np.arange(1, m + 1) * alpha / (m * pi0)
    if below.any():
        k = int(np.flatnonzero(below)[-1]) + 1
        reject[order[:k]] = True
    return reject
