"""Synthetic normal-means experiments: data generation, method runs and FDR/TPR summaries.

Random numbers come from Philox (a counter-based generator) keyed by
``(seed, rep_index, stream)``, so every replication and every stream within
it is an independent, non-overlapping substream and results do not depend on
execution order or parallelism. Scenarios sharing a seed reuse the same
streams, which gives common random numbers across a design grid.
"""

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .baselines import bh, conditional_pvalues, t_pvalues
from .effect_prior import EffectComponent, EffectMixtureSpec, EffectPrior
from .inference import decide_from_lfdr, discretize_variance_distribution, lfdr_from_priors
from .pipeline import GGMixConfig, run_ggmix
from .variance_prior import (
    SummaryTable,
    VarianceGrid,
    VariancePrior,
    build_variance_grid,
    fit_variance_prior,
)

logger = logging.getLogger(__name__)

METHODS = ("ggmix", "bh_t", "is_bh", "is_storey_oracle", "oracle")
G_NAMES = ("g1", "g1a", "g1b", "g2", "g3")
F_NAMES = ("f1", "f2", "f3")

_STREAM_SIGMA, _STREAM_THETA, _STREAM_COMPONENT, _STREAM_MU, _STREAM_X, _STREAM_S2 = range(6)

RECORD_COLUMNS = ("scenario_id", "method", "rep", "fdp", "tpp", "pi0_hat", "runtime_ms", "status")
SUMMARY_COLUMNS = (
    "scenario_id", "method", "g", "f", "pi0", "pi1_prime", "nu", "m", "alpha",
    "reps", "failed", "fdr", "fdr_se", "tpr", "tpr_se", "pi0_hat_mean", "pi0_hat_se", "flagged",
)


def rng_for(seed, rep_index, stream):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep_index), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def variance_distribution(g):
    """Frozen scipy distribution of the true variance for continuous ``g``.

    ``g1a`` (alias ``g1``): ``sigma2 = 1 / W`` with ``W ~ chi2_6 / 6``.
    ``g1b``: ``sigma2 = (1/6) * (1 / V)`` with ``V ~ chi2_6``.
    """
    if g in ("g1", "g1a"):
        return stats.invgamma(3.0, scale=3.0)
    if g == "g1b":
        return stats.invgamma(3.0, scale=1.0 / 12.0)
    raise ValueError(f"{g!r} is not a continuous variance prior")


def _point_masses(g):
    if g == "g2":
        return np.array([1.0]), np.array([1.0])
    if g == "g3":
        return np.array([1.0, 10.0]), np.array([0.5, 0.5])
    if isinstance(g, dict):
        kappa = np.asarray(g["kappa"], dtype=float)
        delta = np.asarray(g["delta"], dtype=float)
        return kappa, delta / delta.sum()
    return None


def effect_components(f, pi1_prime=0.5):
    """``(weights, components)`` of the true non-null density."""
    if f == "f1":
        return np.array([1.0]), (EffectComponent.normal(0.0, 16.0),)
    if f == "f2":
        return np.array([2.0, 1.0]) / 3.0, (
            EffectComponent.normal(0.0, 1.0),
            EffectComponent.normal(0.0, 4.0),
        )
    if f == "f3":
        return np.array([pi1_prime, 1.0 - pi1_prime]), (
            EffectComponent.normal(-3.0, 1.0),
            EffectComponent.normal(3.0, 1.0),
        )
    if isinstance(f, dict):
        comps = tuple(EffectComponent.from_dict(c) for c in f["components"])
        w = np.asarray(f["weights"], dtype=float)
        return w / w.sum(), comps
    raise ValueError(f"unknown effect prior {f!r}")


def _label(spec):
    return spec if isinstance(spec, str) else "custom"


@dataclass(frozen=True)
class ScenarioConfig:
    g: object = "g2"
    f: object = "f1"
    pi0: float = 0.8
    pi1_prime: float = 0.5
    nu: float = 10.0
    m: int = 5000
    replications: int = 200
    alpha: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.g, str) and self.g not in G_NAMES:
            raise ValueError(f"unknown variance prior {self.g!r}")
        if isinstance(self.f, str) and self.f not in F_NAMES:
            raise ValueError(f"unknown effect prior {self.f!r}")
        if isinstance(self.g, dict) and set(self.g) != {"kappa", "delta"}:
            raise ValueError("custom variance prior needs 'kappa' and 'delta'")
        if isinstance(self.f, dict) and set(self.f) != {"weights", "components"}:
            raise ValueError("custom effect prior needs 'weights' and 'components'")
        if not 0 <= self.pi0 <= 1:
            raise ValueError("pi0 must lie in [0, 1]")
        if not 0.5 <= self.pi1_prime <= 1:
            raise ValueError("pi1_prime must lie in [0.5, 1]")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.m < 1 or self.replications < 1:
            raise ValueError("m and replications must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def scenario_id(self):
        parts = [_label(self.g), _label(self.f), f"pi0={self.pi0:g}"]
        if self.f == "f3":
            parts.append(f"p1={self.pi1_prime:g}")
        parts += [f"nu={self.nu:g}", f"m={self.m}"]
        return "_".join(parts)


@dataclass(frozen=True)
class TruthTable:
    theta: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray


def sample_variances(g, m, rng):
    masses = _point_masses(g)
    if masses is None:
        return variance_distribution(g).rvs(size=m, random_state=rng)
    kappa, delta = masses
    if kappa.size == 1:
        return np.full(m, kappa[0])
    return kappa[rng.choice(kappa.size, size=m, p=delta)]


def _sample_component(comp, size, rng):
    if comp.kind == "normal":
        return rng.normal(comp.mean, math.sqrt(comp.variance), size)
    return rng.uniform(comp.lower, comp.upper, size)


def simulate_dataset(cfg, rep_index):
    """Draw one ``(SummaryTable, TruthTable)`` replication of scenario ``cfg``."""
    m = cfg.m
    sigma2 = sample_variances(cfg.g, m, rng_for(cfg.seed, rep_index, _STREAM_SIGMA))
    theta = rng_for(cfg.seed, rep_index, _STREAM_THETA).random(m) >= cfg.pi0
    weights, comps = effect_components(cfg.f, cfg.pi1_prime)
    which = rng_for(cfg.seed, rep_index, _STREAM_COMPONENT).choice(len(comps), size=m, p=weights)
    mu_rng = rng_for(cfg.seed, rep_index, _STREAM_MU)
    mu = np.zeros(m)
    draws = np.empty(m)
    for k, comp in enumerate(comps):
        # every component draws a full vector so streams do not depend on pi0
        draws = np.where(which == k, _sample_component(comp, m, mu_rng), draws)
    mu[theta] = draws[theta]
    x = mu + np.sqrt(sigma2) * rng_for(cfg.seed, rep_index, _STREAM_X).standard_normal(m)
    s2 = sigma2 * rng_for(cfg.seed, rep_index, _STREAM_S2).chisquare(cfg.nu, m) / cfg.nu
    return SummaryTable(x, s2, cfg.nu), TruthTable(theta, mu, sigma2)


def fdp_tpp(theta, delta):
    """False discovery and true positive proportions with ``max(., 1)`` guards."""
    theta = np.asarray(getattr(theta, "theta", theta), dtype=bool)
    delta = np.asarray(delta, dtype=bool)
    if theta.shape != delta.shape:
        raise ValueError("theta and delta differ in length")
    fdp = np.count_nonzero(delta & ~theta) / max(np.count_nonzero(delta), 1)
    tpp = np.count_nonzero(delta & theta) / max(np.count_nonzero(theta), 1)
    return fdp, tpp


def oracle_priors(cfg, grid_size=None):
    """True variance and effect priors of ``cfg`` in the fitted-prior types."""
    masses = _point_masses(cfg.g)
    if masses is None:
        kwargs = {} if grid_size is None else {"n": grid_size}
        vprior = discretize_variance_distribution(variance_distribution(cfg.g), **kwargs)
    else:
        kappa, delta = masses
        vprior = VariancePrior(VarianceGrid(kappa), delta)
    weights, comps = effect_components(cfg.f, cfg.pi1_prime)
    spec = EffectMixtureSpec("custom", comps)
    pi = np.concatenate([[cfg.pi0], (1.0 - cfg.pi0) * weights])
    return vprior, EffectPrior(spec, pi, 0.0)


class _Replication:
    """Lazily shared fits for the methods run on one dataset."""

    def __init__(self, cfg, tab, ggmix_cfg):
        self.cfg = cfg
        self.tab = tab
        self.ggmix_cfg = ggmix_cfg
        self._vprior = None

    def npmle_variance_prior(self):
        if self._vprior is None:
            grid = build_variance_grid(self.tab.s2, self.ggmix_cfg.L)
            self._vprior = fit_variance_prior(self.tab, grid, self.ggmix_cfg.solver)
        return self._vprior

    def run(self, method):
        """Return ``(delta, pi0_hat)``."""
        cfg, tab = self.cfg, self.tab
        if method == "ggmix":
            fit = run_ggmix(tab, replace(self.ggmix_cfg, alpha=cfg.alpha))
            return fit.report.delta, fit.eprior.pi0
        if method == "bh_t":
            return bh(t_pvalues(tab), cfg.alpha), 1.0
        if method == "is_bh":
            return bh(conditional_pvalues(tab, self.npmle_variance_prior()), cfg.alpha), 1.0
        if method == "is_storey_oracle":
            p = conditional_pvalues(tab, self.npmle_variance_prior())
            if cfg.pi0 == 0:
                return np.ones(tab.m, dtype=bool), 0.0
            return bh(p, cfg.alpha, cfg.pi0), cfg.pi0
        if method == "oracle":
            vprior, eprior = oracle_priors(cfg)
            report = decide_from_lfdr(lfdr_from_priors(tab, vprior, eprior), cfg.alpha, cfg.pi0)
            return report.delta, cfg.pi0
        raise ValueError(f"unknown method {method!r}")


def run_replication(cfg, rep_index, methods, ggmix_cfg=None):
    """Generate, fit, decide and score every method on one replication."""
    tab, truth = simulate_dataset(cfg, rep_index)
    rep = _Replication(cfg, tab, ggmix_cfg or GGMixConfig())
    rows = []
    for method in methods:
        t0 = time.perf_counter()
        try:
            delta, pi0_hat = rep.run(method)
            fdp, tpp = fdp_tpp(truth.theta, delta)
            status = "ok"
        except Exception as exc:  # recorded per replication, never fatal
            logger.warning("%s failed on %s rep %d: %s", method, cfg.scenario_id, rep_index, exc)
            fdp = tpp = pi0_hat = float("nan")
            status = f"error: {type(exc).__name__}"
        runtime_ms = 1e3 * (time.perf_counter() - t0)
        rows.append({
            "scenario_id": cfg.scenario_id,
            "method": method,
            "rep": rep_index,
            "fdp": float(fdp),
            "tpp": float(tpp),
            "pi0_hat": float(pi0_hat),
            "runtime_ms": runtime_ms,
            "status": status,
        })
    return rows


@dataclass
class MetricsReport:
    scenario: ScenarioConfig
    method: str
    fdp: np.ndarray
    tpp: np.ndarray
    pi0_hat: np.ndarray
    failed: int = 0

    @staticmethod
    def _se(v):
        return float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")

    @property
    def reps(self):
        return self.fdp.size

    @property
    def fdr(self):
        return float(np.mean(self.fdp)) if self.reps else float("nan")

    @property
    def tpr(self):
        return float(np.mean(self.tpp)) if self.reps else float("nan")

    @property
    def pi0_hat_mean(self):
        return float(np.mean(self.pi0_hat)) if self.reps else float("nan")

    @property
    def fdr_se(self):
        return self._se(self.fdp)

    @property
    def tpr_se(self):
        return self._se(self.tpp)

    @property
    def pi0_hat_se(self):
        return self._se(self.pi0_hat)

    @property
    def flagged(self):
        total = self.reps + self.failed
        return total > 0 and self.failed > 0.01 * total

    def summary_row(self):
        sc = self.scenario
        return {
            "scenario_id": sc.scenario_id,
            "method": self.method,
            "g": _label(sc.g),
            "f": _label(sc.f),
            "pi0": sc.pi0,
            "pi1_prime": sc.pi1_prime,
            "nu": sc.nu,
            "m": sc.m,
            "alpha": sc.alpha,
            "reps": self.reps,
            "failed": self.failed,
            "fdr": self.fdr,
            "fdr_se": self.fdr_se,
            "tpr": self.tpr,
            "tpr_se": self.tpr_se,
            "pi0_hat_mean": self.pi0_hat_mean,
            "pi0_hat_se": self.pi0_hat_se,
            "flagged": int(self.flagged),
        }


@dataclass
class GridResult:
    records: list
    reports: list = field(default_factory=list)

    def report(self, scenario_id, method):
        for r in self.reports:
            if r.scenario.scenario_id == scenario_id and r.method == method:
                return r
        raise KeyError((scenario_id, method))

    def records_csv(self, timings=True):
        return _to_csv(self.records, RECORD_COLUMNS, blank=() if timings else ("runtime_ms",))

    def summary_csv(self):
        return _to_csv([r.summary_row() for r in self.reports], SUMMARY_COLUMNS)


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _to_csv(rows, columns, blank=()):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if c in blank else _fmt(row[c]) for c in columns])
    return buf.getvalue()


def aggregate(scenarios, methods, records):
    reports = []
    for cfg in scenarios:
        for method in methods:
            rows = sorted(
                (r for r in records if r["scenario_id"] == cfg.scenario_id and r["method"] == method),
                key=lambda r: r["rep"],
            )
            ok = [r for r in rows if r["status"] == "ok"]
            reports.append(MetricsReport(
                cfg,
                method,
                np.array([r["fdp"] for r in ok]),
                np.array([r["tpp"] for r in ok]),
                np.array([r["pi0_hat"] for r in ok]),
                failed=len(rows) - len(ok),
            ))
    return reports


def run_grid(scenarios, methods, ggmix_cfg=None, n_jobs=1, progress=False):
    """Run every method on every replication of every scenario.

    ``n_jobs`` other than 1 spreads replications over worker processes
    (``0`` or negative means all cores); the output does not depend on it.
    """
    scenarios = list(scenarios)
    methods = list(methods)
    if not scenarios:
        raise ValueError("no scenarios given")
    if not methods:
        raise ValueError("no methods given")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown}")
    ids = [s.scenario_id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ValueError("scenario ids must be unique")
    ggmix_cfg = ggmix_cfg or GGMixConfig()
    tasks = [(cfg, rep) for cfg in scenarios for rep in range(cfg.replications)]
    if n_jobs == 1:
        iterator = tasks
        if progress:
            from tqdm import tqdm

            iterator = tqdm(tasks, desc="replications")
        chunks = [run_replication(cfg, rep, methods, ggmix_cfg) for cfg, rep in iterator]
    else:
        from joblib import Parallel, delayed

        workers = -1 if n_jobs <= 0 else n_jobs
        chunks = Parallel(n_jobs=workers, verbose=5 if progress else 0)(
            delayed(run_replication)(cfg, rep, methods, ggmix_cfg) for cfg, rep in tasks
        )
    order = {sid: i for i, sid in enumerate(ids)}
    morder = {m: i for i, m in enumerate(methods)}
    records = sorted(
        (row for chunk in chunks for row in chunk),
        key=lambda r: (order[r["scenario_id"]], morder[r["method"]], r["rep"]),
    )
    return GridResult(records, aggregate(scenarios, methods, records))


PI0_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
NU_GRID = (2, 4, 8, 16, 32, 64)
PI1_GRID = tuple(round(0.5 + 0.1 * k, 1) for k in range(6))
PRESET_G = ("g1", "g2", "g3")


def preset_scenarios(name, replications=200, seed=0, m=5000, alpha=0.1):
    """Scenario grids of the three simulation designs.

    ``fig_pi0``: every (g, f) pair over pi0 = 0.1..0.9 with nu = 10.
    ``fig_nu``: every (g, f) pair over nu in {2, ..., 64} with pi0 = 0.8.
    ``fig_f3``: f3 over pi1' = 0.5..1.0 with pi0 = 0.8, nu = 10.
    ``g1`` is the ``g1a`` parameterisation (``sigma2 = 1 / W``, ``W ~ chi2_6 / 6``).
    """
    common = dict(replications=replications, seed=seed, m=m, alpha=alpha)
    if name == "fig_pi0":
        return [
            ScenarioConfig(g, f, pi0, 0.5, 10.0, **common)
            for g in PRESET_G for f in F_NAMES for pi0 in PI0_GRID
        ]
    if name == "fig_nu":
        return [
            ScenarioConfig(g, f, 0.8, 0.5, float(nu), **common)
            for g in PRESET_G for f in F_NAMES for nu in NU_GRID
        ]
    if name == "fig_f3":
        return [
            ScenarioConfig(g, "f3", 0.8, p1, 10.0, **common)
            for g in PRESET_G for p1 in PI1_GRID
        ]
    raise ValueError(f"unknown preset {name!r}")


PRESETS = ("fig_pi0", "fig_nu", "fig_f3")
