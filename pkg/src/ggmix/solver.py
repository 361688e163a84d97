"""Maximum-likelihood mixture proportions over the probability simplex.

Both prior fits reduce to

    maximize  (1/W) * sum_i w_i * log( sum_j x_j * exp(A_ij) )   over x in the simplex

with non-negative row weights ``w`` (``W = sum w``). The default method is a
sequential quadratic programming scheme: a second-order model of the
objective is minimised over the simplex by a primal active-set QP, followed
by a backtracking line search on the true objective, so every accepted
iterate increases the objective. Plain EM is kept as a reference method.

Optimality is certified by the KKT condition of the concave problem:
``g_j = (1/W) sum_i w_i L_ij / (L x)_i <= 1`` for all ``j``; the reported gap
is ``max_j g_j - 1``.
"""

from dataclasses import dataclass, field

import numpy as np

_ROW_BLOCK = 65536
_LOG_FLUSH = -700.0
_FLUSH = 1e-300


class ConvergenceError(RuntimeError):
    """Raised when a mixture fit runs out of iterations.

    Carries the best iterate found so far.
    """

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class SolverOptions:
    method: str = "sqp"
    max_iter: int = 2000
    em_max_iter: int = 100000
    rel_tol: float = 1e-9
    kkt_tol: float = 1e-6
    truncate_below: float = 1e-12
    qp_max_iter: int = 500

    def __post_init__(self):
        if self.method not in ("sqp", "em"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass
class MixtureFit:
    weights: np.ndarray
    objective: float
    kkt_gap: float
    iterations: int
    converged: bool
    method: str
    history: list = field(default_factory=list, repr=False)

    def diagnostics(self):
        return {
            "method": self.method,
            "objective": float(self.objective),
            "kkt_gap": float(self.kkt_gap),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


class _Problem:
    """Row-scaled likelihood matrix with cached row maxima."""

    def __init__(self, log_lik, row_weights=None):
        log_lik = np.asarray(log_lik, dtype=float)
        if log_lik.ndim != 2:
            raise ValueError("log-likelihood matrix must be 2-d")
        if np.any(np.isnan(log_lik)) or np.any(np.isposinf(log_lik)):
            raise ValueError("log-likelihood matrix contains nan or +inf")
        rowmax = log_lik.max(axis=1)
        if np.any(np.isneginf(rowmax)):
            bad = np.flatnonzero(np.isneginf(rowmax))[:10]
            raise ValueError(f"rows with zero likelihood under every component: {bad.tolist()}")
        scaled = log_lik - rowmax[:, None]
        # subnormal entries are numerically irrelevant but slow every matvec
        scaled[scaled < _LOG_FLUSH] = -np.inf
        self.L = np.exp(scaled)
        self.rowmax = rowmax
        n = log_lik.shape[0]
        w = np.ones(n) if row_weights is None else np.asarray(row_weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0):
            raise ValueError("row weights must be non-negative, one per row")
        self.w = w
        self.W = float(w.sum())
        # optimal mixtures satisfy (Lx)_i >= w_i / W, since g_j <= 1 at each row's max entry
        self.floor = w / self.W
        self.offset = float(w @ rowmax) / self.W

    def mixture(self, x):
        return self.L @ x

    def objective(self, x, d=None):
        if d is None:
            d = self.mixture(x)
        with np.errstate(divide="ignore"):
            logd = np.log(d)
        return float(self.w @ logd) / self.W + self.offset

    def ratio_gradient(self, d):
        """``g_j = (1/W) sum_i w_i L_ij / d_i``, the objective gradient."""
        with np.errstate(divide="ignore"):
            r = self.w / d
        return (self.L.T @ r) / self.W

    def hessian(self, d):
        k = self.L.shape[1]
        H = np.zeros((k, k))
        sw = np.sqrt(self.w) / d
        for start in range(0, self.L.shape[0], _ROW_BLOCK):
            block = self.L[start:start + _ROW_BLOCK] * sw[start:start + _ROW_BLOCK, None]
            H += block.T @ block
        return H / self.W


def _simplex_qp(H, c, y0, max_iter):
    """Minimise ``0.5 y'Hy + c'y`` over the simplex by a primal active-set method.

    ``y0`` must be feasible. Bound constraints ``y_j >= 0`` form the working
    set; the equality ``sum(y) = 1`` is always enforced.
    """
    k = len(c)
    y = y0.copy()
    active = y <= 0
    y[active] = 0.0
    ridge = 1e-10 * max(np.trace(H) / k, 1e-300)
    for _ in range(max_iter):
        free = np.flatnonzero(~active)
        nf = len(free)
        grad = H @ y + c
        kkt = np.zeros((nf + 1, nf + 1))
        kkt[:nf, :nf] = H[np.ix_(free, free)] + ridge * np.eye(nf)
        kkt[:nf, nf] = 1.0
        kkt[nf, :nf] = 1.0
        rhs = np.concatenate([-grad[free], [0.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p = sol[:nf]
        nu = sol[nf]
        scale = max(1.0, np.max(np.abs(y)))
        if np.max(np.abs(p), initial=0.0) <= 1e-12 * scale:
            if not active.any():
                return y
            # multipliers of the active bounds
            mult = grad[active] + nu
            j = np.argmin(mult)
            if mult[j] >= -1e-12 * max(1.0, np.max(np.abs(grad))):
                return y
            active[np.flatnonzero(active)[j]] = False
            continue
        step = 1.0
        blocking = -1
        neg = p < 0
        if neg.any():
            ratios = -y[free[neg]] / p[neg]
            j = np.argmin(ratios)
            if ratios[j] < 1.0:
                step = ratios[j]
                blocking = free[neg][j]
        y[free] += step * p
        if blocking >= 0:
            y[blocking] = 0.0
            active[blocking] = True
        y = np.maximum(y, 0.0)
    return y


def _finish(problem, x, opts, iterations, converged, method, history):
    x = np.where(x < opts.truncate_below, 0.0, x)
    x = x / x.sum()
    d = problem.mixture(x)
    gap = float(problem.ratio_gradient(d).max() - 1.0)
    return MixtureFit(
        weights=x,
        objective=problem.objective(x, d),
        kkt_gap=gap,
        iterations=iterations,
        converged=converged,
        method=method,
        history=history,
    )


def _vertex_step(problem, x, d, j):
    """Exact line search from ``x`` toward vertex ``j`` (a Frank-Wolfe step).

    The objective is concave along the segment, so the root of its
    derivative is found by bisection. Returns ``(x_new, d_new)``.
    """
    col = problem.L[:, j]
    diff = col - d
    w = problem.w

    def slope(t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(w @ (diff / (d + t * diff)))

    lo, hi = 0.0, 1.0
    if slope(1.0) >= 0:
        lo = 1.0
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if slope(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(hi, 1e-300):
                break
    t = lo
    x_new = (1.0 - t) * x
    x_new[j] += t
    return x_new, d + t * diff


def _sqp(problem, x, opts):
    history = []
    d = problem.mixture(x)
    obj = problem.objective(x, d)
    history.append(obj)
    for it in range(1, opts.max_iter + 1):
        # keep rows away from zero density, else one step can strand a row
        # whose only supporting component was dropped
        margin = 0.5 * min(1.0, float(np.min(d / np.maximum(problem.floor, 1e-300))))
        g = problem.ratio_gradient(d)
        gap = g.max() - 1.0
        accepted = False
        with np.errstate(over="ignore", invalid="ignore"):
            H = problem.hessian(d)
        if np.all(np.isfinite(H)):
            # g is the objective gradient and H @ x == g, so the QP in y has linear term -2g
            y = _simplex_qp(H, -2.0 * g, x, opts.qp_max_iter)
            p = y - x
            step = 1.0
            if float(g @ p) > 0:
                # plain increase rather than Armijo: rows with vanishing mixture
                # density make the linear model wildly optimistic
                while step > 1e-12:
                    x_new = x + step * p
                    d_new = problem.mixture(x_new)
                    obj_new = problem.objective(x_new, d_new)
                    if obj_new > obj and np.all(d_new >= margin * problem.floor):
                        accepted = True
                        break
                    step *= 0.5
        if not accepted and gap > 0:
            x_new, d_new = _vertex_step(problem, x, d, int(np.argmax(g)))
            obj_new = problem.objective(x_new, d_new)
            accepted = obj_new > obj
        if not accepted:
            # no ascent direction left; certificate decides convergence
            return it, gap <= opts.kkt_tol, x, history
        rel = abs(obj_new - obj) / max(1.0, abs(obj_new))
        x, d, obj = x_new, d_new, obj_new
        history.append(obj)
        if rel < opts.rel_tol:
            gap = problem.ratio_gradient(d).max() - 1.0
            if gap <= opts.kkt_tol:
                return it, True, x, history
    return opts.max_iter, False, x, history


def em_iterations(problem, x, n_iter, kkt_tol=None, history=None):
    """Run up to ``n_iter`` multiplicative EM updates; returns (iters, x)."""
    for it in range(1, n_iter + 1):
        d = problem.mixture(x)
        g = problem.ratio_gradient(d)
        if kkt_tol is not None and g.max() - 1.0 <= kkt_tol:
            return it - 1, x
        x = x * g
        x[x < _FLUSH] = 0.0
        x /= x.sum()
        if history is not None:
            history.append(problem.objective(x))
    return n_iter, x


def fit_mixture(log_lik, row_weights=None, opts=None, x0=None):
    """Fit simplex mixture proportions for the log-likelihood matrix ``log_lik``.

    Parameters
    ----------
    log_lik : (n, k) array
        ``log_lik[i, j]`` is the log density of observation ``i`` under
        component ``j``; ``-inf`` entries are allowed.
    row_weights : (n,) array, optional
        Non-negative observation weights, all ones by default.
    opts : SolverOptions
    x0 : (k,) array, optional
        Interior starting point; uniform by default.

    Returns
    -------
    MixtureFit
        ``objective`` is the weighted mean log-likelihood
        ``(1/W) sum_i w_i log(sum_j x_j exp(A_ij))``.
    """
    opts = opts or SolverOptions()
    problem = _Problem(log_lik, row_weights)
    k = problem.L.shape[1]
    if k == 1:
        return _finish(problem, np.ones(1), opts, 0, True, opts.method, [])
    x = np.full(k, 1.0 / k) if x0 is None else np.asarray(x0, dtype=float) / np.sum(x0)
    if opts.method == "em":
        history = [problem.objective(x)]
        iters, x = em_iterations(problem, x, opts.em_max_iter, opts.kkt_tol, history)
        converged = iters < opts.em_max_iter
    else:
        iters, converged, x, history = _sqp(problem, x, opts)
    fit = _finish(problem, x, opts, iters, converged, opts.method, history)
    if not converged:
        raise ConvergenceError(
            f"{opts.method} did not converge in {iters} iterations "
            f"(kkt gap {fit.kkt_gap:.3g})",
            fit,
        )
    return fit


def kkt_gap(log_lik, x, row_weights=None):
    """Certificate ``max_j g_j - 1`` for proportions ``x``."""
    problem = _Problem(log_lik, row_weights)
    return float(problem.ratio_gradient(problem.mixture(np.asarray(x, float))).max() - 1.0)


def mean_loglik(log_lik, x, row_weights=None):
    problem = _Problem(log_lik, row_weights)
    return problem.objective(np.asarray(x, dtype=float))
