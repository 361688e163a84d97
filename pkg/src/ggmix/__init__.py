"""Empirical Bayes multiple testing for heteroscedastic normal means.

Fits a discrete prior for the variances and a flexible mixture for the
non-null effects from summary statistics ``(x_i, s2_i)``, then rejects the
hypotheses with the smallest local false discovery rates subject to an FDR
target.
"""

__version__ = "0.1.0"

from .baselines import bh, conditional_pvalues, t_pvalues
from .effect_prior import (
    EffectComponent,
    EffectMixtureSpec,
    EffectPrior,
    build_effect_spec,
    conditional_density_matrix,
    fit_effect_prior,
)
from .inference import DecisionReport, adaptive_threshold, decide, lfdr_from_priors
from .pipeline import GGMixConfig, fit_priors, run_ggmix
from .solver import ConvergenceError, SolverOptions
from .variance_prior import (
    SummaryTable,
    VarianceGrid,
    VariancePrior,
    build_variance_grid,
    fit_variance_prior,
    posterior_variance_weights,
)
