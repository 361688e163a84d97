"""Scalar special functions and density kernels.

Everything here is vectorised over numpy arrays and pure. Downstream
mixture code works with the ``log*`` variants and combines them with
log-sum-exp, so the linear-space functions are thin wrappers.
"""

import math

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)

_BETACF_MAXITER = 500
_BETACF_TOL = 1e-15
_TINY = 1e-300


def _check_positive(name, value):
    if np.any(np.asarray(value) <= 0) or np.any(np.isnan(value)):
        raise ValueError(f"{name} must be positive")


def normal_logpdf(x, mean=0.0, variance=1.0):
    _check_positive("variance", variance)
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(variance) + (x - mean) ** 2 / variance)


def normal_pdf(x, mean=0.0, variance=1.0):
    """Density of N(mean, variance) at ``x``."""
    return np.exp(normal_logpdf(x, mean, variance))


def normal_cdf(x):
    return special.ndtr(x)


def normal_sf(x):
    """Upper tail ``1 - Phi(x)``, accurate for large positive ``x``."""
    return special.ndtr(-np.asarray(x, dtype=float))


def normal_logcdf(x):
    return special.log_ndtr(x)


def log_normal_cdf_diff(upper, lower):
    """``log(Phi(upper) - Phi(lower))`` for ``upper >= lower``.

    Evaluated on whichever tail keeps both arguments non-positive so the
    subtraction never cancels to zero for arguments far in the right tail.
    """
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    flip = (upper + lower) > 0
    hi = np.where(flip, -lower, upper)
    lo = np.where(flip, -upper, lower)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log1p(-np.exp(log_lo - log_hi))
        # narrow intervals cancel; expand around the midpoint instead
        h = hi - lo
        c = 0.5 * (hi + lo)
        c2 = c * c
        h2 = h * h
        series = (
            np.log(h)
            - 0.5 * (LOG_2PI + c2)
            + np.log1p((c2 - 1.0) * h2 / 24.0 + (c2 * c2 - 6.0 * c2 + 3.0) * h2 * h2 / 1920.0)
        )
    out = np.where(h * np.maximum(1.0, np.abs(c)) < 1e-2, series, out)
    return np.where(hi <= lo, -np.inf, out)


def gamma_logpdf(x, shape, rate):
    """Log density of Gamma(shape, rate) (rate parameterisation)."""
    _check_positive("x", x)
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    x = np.asarray(x, dtype=float)
    return (
        shape * np.log(rate)
        - special.gammaln(shape)
        + (shape - 1.0) * np.log(x)
        - rate * x
    )


def gamma_pdf(x, shape, rate):
    return np.exp(gamma_logpdf(x, shape, rate))


def _betacf(a, b, x):
    # Modified Lentz evaluation of the incomplete beta continued fraction,
    # vectorised over x; converges quickly for x < (a + 1) / (a + b + 2).
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _BETACF_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > _BETACF_TOL
        if not active.any():
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a, b, x, one_minus_x=None):
    """Regularised incomplete beta ``I_x(a, b)`` for scalar ``a``, ``b``.

    ``one_minus_x`` may be passed when ``1 - x`` is known more accurately
    than the subtraction would give.
    """
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = 1.0 - x if one_minus_x is None else np.atleast_1d(np.asarray(one_minus_x, dtype=float))
    if np.any((x < 0) | (x > 1)):
        raise ValueError("x must lie in [0, 1]")
    out = np.empty_like(x)
    out[x <= 0] = 0.0
    out[y <= 0] = 1.0
    inner = (x > 0) & (y > 0)
    lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    direct = inner & (x < (a + 1.0) / (a + b + 2.0))
    swapped = inner & ~direct
    if direct.any():
        xs, ys = x[direct], y[direct]
        front = np.exp(a * np.log(xs) + b * np.log(ys) - lbeta)
        out[direct] = front * _betacf(a, b, xs) / a
    if swapped.any():
        xs, ys = x[swapped], y[swapped]
        front = np.exp(a * np.log(xs) + b * np.log(ys) - lbeta)
        out[swapped] = 1.0 - front * _betacf(b, a, ys) / b
    return out


def student_t_sf(t, nu):
    """Upper tail probability ``P(T_nu > t)``."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    t2 = t * t
    # P(|T| > |t|) = I_{nu/(nu+t^2)}(nu/2, 1/2)
    two_tail = betainc_regularized(0.5 * nu, 0.5, nu / (nu + t2), t2 / (nu + t2))
    two_tail = np.where(np.isinf(t), 0.0, two_tail)
    sf = np.where(t >= 0, 0.5 * two_tail, 1.0 - 0.5 * two_tail)
    return float(sf[0]) if scalar else sf


def student_t_two_sided_pvalue(t, nu):
    return np.minimum(1.0, 2.0 * student_t_sf(np.abs(t), nu))


def logsumexp(a, axis=-1):
    """Log of summed exponentials along ``axis``; all ``-inf`` gives ``-inf``."""
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    return np.squeeze(out, axis=axis)
