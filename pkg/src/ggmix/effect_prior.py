"""Non-null effect mixture: basis families, conditional densities and the penalised fit."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .numkernel import log_normal_cdf_diff, logsumexp, normal_logpdf
from .solver import SolverOptions, fit_mixture
from .variance_prior import empirical_quantile

logger = logging.getLogger(__name__)

FAMILIES = (
    "gaussian_scale",
    "uniform",
    "half_uniform",
    "loc_plus_scale",
    "loc_plus_uniform",
    "loc_plus_half_uniform",
    "custom",
)
DEFAULT_FAMILY = "loc_plus_scale"
SCALE_RATIO = math.sqrt(2.0)

_ROW_CHUNK = 16384


@dataclass(frozen=True)
class EffectComponent:
    kind: str
    mean: float = 0.0
    variance: float = 1.0
    lower: float = 0.0
    upper: float = 0.0

    def __post_init__(self):
        if self.kind == "normal":
            if not self.variance > 0:
                raise ValueError("normal component needs positive variance")
        elif self.kind == "uniform":
            if not self.lower < self.upper:
                raise ValueError("uniform component needs lower < upper")
        else:
            raise ValueError(f"unknown component kind {self.kind!r}")

    @classmethod
    def normal(cls, mean, variance):
        return cls("normal", mean=float(mean), variance=float(variance))

    @classmethod
    def uniform(cls, lower, upper):
        return cls("uniform", lower=float(lower), upper=float(upper))

    def to_dict(self):
        if self.kind == "normal":
            return {"kind": "normal", "mean": self.mean, "variance": self.variance}
        return {"kind": "uniform", "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "normal":
            return cls.normal(d["mean"], d["variance"])
        return cls.uniform(d["lower"], d["upper"])

    def log_convolution(self, x, kappa):
        """Log of the density of ``mu + N(0, kappa)`` at ``x``, ``mu`` from this component."""
        if self.kind == "normal":
            return normal_logpdf(x, self.mean, self.variance + kappa)
        sd = np.sqrt(kappa)
        return log_normal_cdf_diff((x - self.lower) / sd, (x - self.upper) / sd) - math.log(
            self.upper - self.lower
        )


def _is_scale(c):
    return c.kind == "normal" and c.mean == 0.0


def _is_symmetric_uniform(c):
    return c.kind == "uniform" and c.lower == -c.upper


def _is_half_uniform(c):
    return c.kind == "uniform" and (c.lower == 0.0 or c.upper == 0.0)


@dataclass(frozen=True)
class EffectMixtureSpec:
    """Fixed components of the non-null mixture.

    For the ``loc_plus_*`` families the first ``n_location`` components are
    the Gaussian location grid sharing ``location_variance``.
    """

    family: str
    components: tuple
    n_location: int = 0
    location_variance: float = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown effect family {self.family!r}")
        comps = tuple(self.components)
        if not comps:
            raise ValueError("effect mixture needs at least one component")
        object.__setattr__(self, "components", comps)
        if self.family == "custom":
            return
        loc_part = self.family.startswith("loc_plus_")
        base = self.family[len("loc_plus_"):] if loc_part else self.family
        base = {"scale": "gaussian_scale"}.get(base, base)
        n_loc = self.n_location
        if not loc_part and n_loc:
            raise ValueError(f"{self.family} has no location components")
        if loc_part:
            if n_loc < 1:
                raise ValueError(f"{self.family} needs at least one location component")
            if any(c.kind != "normal" or c.variance != self.location_variance
                   for c in comps[:n_loc]):
                raise ValueError("location components must share the common variance")
        check = {
            "gaussian_scale": _is_scale,
            "uniform": _is_symmetric_uniform,
            "half_uniform": _is_half_uniform,
        }[base]
        if not all(check(c) for c in comps[n_loc:]):
            raise ValueError(f"components violate the {base} family constraint")

    @property
    def K(self):
        return len(self.components)

    def to_dict(self):
        return {
            "family": self.family,
            "n_location": self.n_location,
            "location_variance": self.location_variance,
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["family"],
            tuple(EffectComponent.from_dict(c) for c in d["components"]),
            int(d.get("n_location", 0)),
            d.get("location_variance"),
        )


def scale_radii(x, s2, n=None):
    """Geometric radius grid from ``min(s)/10`` to ``2*sqrt(max(x^2 - s^2)+)``.

    Neighbouring radii differ by at most a factor ``sqrt(2)`` unless ``n`` is
    given, in which case exactly ``n`` log-spaced radii are returned.
    """
    s2 = np.asarray(s2, dtype=float)
    x = np.asarray(x, dtype=float)
    lo = math.sqrt(float(s2.min())) / 10.0
    excess = float(np.max(x * x - s2))
    hi = 2.0 * math.sqrt(excess) if excess > 0 else 0.0
    if hi <= lo:
        hi = 8.0 * lo
    if n is None:
        n = math.ceil(math.log(hi / lo) / math.log(SCALE_RATIO) - 1e-9) + 1
    if n == 1:
        return np.array([hi])
    r = np.geomspace(lo, hi, n)
    r[0], r[-1] = lo, hi
    return r


def build_effect_spec(x, s2, family=DEFAULT_FAMILY, K1=50, K2=None, zeta2=1.0):
    """Effect mixture with data-driven location and scale grids.

    Parameters
    ----------
    x, s2 : arrays
        Observed effects and variance estimates.
    family : str
        One of the six basis families.
    K1 : int
        Number of location components (ignored by the pure families).
    K2 : int, optional
        Number of scale/uniform components; chosen from the data span when
        omitted. Must be even for the half-uniform families.
    zeta2 : float
        Common variance of the location components.
    """
    if family not in FAMILIES or family == "custom":
        raise ValueError(f"cannot build a grid for family {family!r}")
    x = np.asarray(x, dtype=float)
    loc_part = family.startswith("loc_plus_")
    base = family[len("loc_plus_"):] if loc_part else family
    comps = []
    if loc_part:
        if K1 < 1:
            raise ValueError("location families need K1 >= 1")
        a = empirical_quantile(x, 0.01)
        b = empirical_quantile(x, 0.99)
        if a == b:
            logger.warning("degenerate x; using a single location component")
            gammas = np.array([a])
        else:
            gammas = np.linspace(a, b, K1)
        comps += [EffectComponent.normal(g, zeta2) for g in gammas]
    if base in ("half_uniform",) and K2 is not None and K2 % 2:
        raise ValueError("half-uniform families need an even K2")
    n_radii = None if K2 is None else (K2 // 2 if base == "half_uniform" else K2)
    if n_radii is not None and n_radii < 1:
        raise ValueError("K2 must be positive")
    radii = scale_radii(x, s2, n_radii)
    if base in ("scale", "gaussian_scale"):
        comps += [EffectComponent.normal(0.0, r * r) for r in radii]
    elif base == "uniform":
        comps += [EffectComponent.uniform(-r, r) for r in radii]
    else:
        comps += [EffectComponent.uniform(-r, 0.0) for r in radii]
        comps += [EffectComponent.uniform(0.0, r) for r in radii]
    n_loc = len(comps) - len(radii) * (2 if base == "half_uniform" else 1)
    return EffectMixtureSpec(family, tuple(comps), n_loc, zeta2 if loc_part else None)


def component_convolution(x, post_row, grid, comp):
    """``sum_l w_l * int N(x; mu, kappa_l) f_k(mu) dmu`` for one observation."""
    kappa = grid.kappa if hasattr(grid, "kappa") else np.asarray(grid, dtype=float)
    w = np.asarray(post_row, dtype=float)
    keep = w > 0
    return float(np.sum(w[keep] * np.exp(comp.log_convolution(float(x), kappa[keep]))))


@dataclass(frozen=True)
class ConditionalDensityMatrix:
    """Log densities of each ``x_i`` given ``s2_i``; column 0 is the null."""

    b: np.ndarray

    @property
    def shape(self):
        return self.b.shape


def _log_null_and_components(x, log_w, kappa, components):
    out = np.empty((x.size, len(components) + 1))
    xc = x[:, None]
    kc = kappa[None, :]
    out[:, 0] = logsumexp(log_w + normal_logpdf(xc, 0.0, kc), axis=1)
    for k, comp in enumerate(components, start=1):
        out[:, k] = logsumexp(log_w + comp.log_convolution(xc, kc), axis=1)
    return out


def conditional_density_matrix(tab, post, grid, spec):
    """Matrix ``B[i, k] = log p(x_i | s2_i, component k)`` with the null in column 0.

    ``grid`` must be the grid the posterior weights were computed on.
    """
    if post.L != grid.L:
        raise ValueError("posterior weights and variance grid disagree")
    kappa = grid.kappa[post.support]
    b = np.empty((tab.m, spec.K + 1))
    for start in range(0, tab.m, _ROW_CHUNK):
        rows = slice(start, start + _ROW_CHUNK)
        b[rows] = _log_null_and_components(
            tab.x[rows], post.log_weights[rows], kappa, spec.components
        )
    return ConditionalDensityMatrix(b)


@dataclass(frozen=True)
class EffectPrior:
    spec: EffectMixtureSpec
    pi: np.ndarray
    lam: float = 10.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).ravel()
        if pi.size != self.spec.K + 1:
            raise ValueError("pi must hold K + 1 proportions")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError("pi must lie on the simplex")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        object.__setattr__(self, "pi", pi)

    @property
    def pi0(self):
        return float(self.pi[0])

    @property
    def pi_prime(self):
        """Within-alternative mixing proportions; undefined (nan) when pi0 == 1."""
        rest = self.pi[1:]
        total = rest.sum()
        return rest / total if total > 0 else np.full(rest.size, np.nan)


def penalized_problem(bmat, lam):
    """Stack the penalty ``lam * log(pi0)`` as a weighted pseudo-observation."""
    b = bmat.b
    if lam == 0:
        return b, None
    penalty = np.full((1, b.shape[1]), -np.inf)
    penalty[0, 0] = 0.0
    weights = np.ones(b.shape[0] + 1)
    weights[-1] = lam
    return np.vstack([b, penalty]), weights


def fit_effect_prior(bmat, spec, lam=10.0, opts=None):
    """Penalised maximum conditional likelihood estimate of ``pi``.

    Maximises ``sum_i log(sum_k pi_k exp(B_ik)) + lam * log(pi_0)``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    opts = opts or SolverOptions()
    k = bmat.b.shape[1]
    if k != spec.K + 1:
        raise ValueError("density matrix does not match the effect spec")
    x0 = np.full(k, 0.5 / max(k - 1, 1))
    x0[0] = 0.5 if k > 1 else 1.0
    log_lik, weights = penalized_problem(bmat, lam)
    fit = fit_mixture(log_lik, weights, opts, x0=x0)
    diag = fit.diagnostics()
    diag["objective"] = fit.objective * (bmat.b.shape[0] + lam)
    return EffectPrior(spec, fit.weights, float(lam), diag)
