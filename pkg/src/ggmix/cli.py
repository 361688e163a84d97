"""Command line interface: ``ggmix analyze``, ``ggmix fit`` and ``ggmix simulate``."""

import argparse
import logging
import os
import sys

import yaml

from . import simlab
from .baselines import conditional_pvalues
from .effect_prior import FAMILIES
from .fileio import (
    InputError,
    decisions_csv,
    dump_json,
    manifest,
    priors_document,
    read_summary_table,
)
from .pipeline import GGMixConfig, run_ggmix

logger = logging.getLogger("ggmix")

ANALYSIS_DEFAULTS = {
    "input": None,
    "x_col": "x",
    "s2_col": "s2",
    "id_col": "id",
    "nu": None,
    "alpha": 0.1,
    "lambda": 10.0,
    "L": 50,
    "family": "loc_plus_scale",
    "K1": 50,
    "K2": None,
    "zeta2": 1.0,
    "out_dir": ".",
    "seed": 0,
    "threads": 0,
}


class ConfigError(ValueError):
    pass


def load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return cfg


def _merge_analysis(args):
    cfg = dict(ANALYSIS_DEFAULTS)
    file_cfg = load_config(args.config)
    unknown = set(file_cfg) - set(cfg)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg.update(file_cfg)
    for key in ANALYSIS_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["input"] is None:
        raise ConfigError("no input table given (--input)")
    if cfg["nu"] is None or not float(cfg["nu"]) > 0:
        raise ConfigError("degrees of freedom --nu must be given and positive")
    if not 0 < float(cfg["alpha"]) < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if float(cfg["lambda"]) < 0:
        raise ConfigError("lambda must be non-negative")
    if cfg["family"] not in FAMILIES or cfg["family"] == "custom":
        raise ConfigError(f"unknown family {cfg['family']!r}")
    return cfg


def ggmix_config(cfg):
    return GGMixConfig(
        L=int(cfg["L"]),
        family=cfg["family"],
        K1=int(cfg["K1"]),
        K2=None if cfg.get("K2") is None else int(cfg["K2"]),
        zeta2=float(cfg["zeta2"]),
        lam=float(cfg["lambda"]),
        alpha=float(cfg["alpha"]),
    )


def _thread_limit(threads):
    if not threads:
        return _NullContext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(threads))


class _NullContext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _write(out_dir, name, text, written):
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    written.append(name)
    logger.info("wrote %s", path)


def _fit_and_write(args, command):
    cfg = _merge_analysis(args)
    ids, tab = read_summary_table(cfg["input"], float(cfg["nu"]), cfg["x_col"], cfg["s2_col"],
                                  cfg["id_col"])
    gcfg = ggmix_config(cfg)
    with _thread_limit(cfg["threads"]):
        fit = run_ggmix(tab, gcfg)
        cond_p = conditional_pvalues(tab, fit.vprior) if command == "analyze" else None
    os.makedirs(cfg["out_dir"], exist_ok=True)
    written = []
    report = fit.report if command == "analyze" else None
    _write(cfg["out_dir"], "priors.json",
           dump_json(priors_document(fit.vprior, fit.eprior, tab.nu, report)), written)
    if command == "analyze":
        _write(cfg["out_dir"], "decisions.csv",
               decisions_csv(ids, tab, fit.report.lfdr, cond_p, fit.report.delta), written)
    echo = dict(cfg, ggmix=gcfg.to_dict())
    _write(cfg["out_dir"], "manifest.json", dump_json(manifest(command, echo, written)), written)
    if command == "analyze":
        print(f"m={tab.m} pi0_hat={fit.eprior.pi0:.4f} tau*={fit.report.tau_star:.4g} "
              f"rejected={fit.report.rejected_count} at alpha={gcfg.alpha}")
    else:
        print(f"m={tab.m} pi0_hat={fit.eprior.pi0:.4f}")
    return 0


def cmd_analyze(args):
    return _fit_and_write(args, "analyze")


def cmd_fit(args):
    return _fit_and_write(args, "fit")


SIM_KEYS = {"preset", "scenarios", "methods", "replications", "seed", "m", "alpha", "ggmix",
            "out_dir", "threads"}


def _scenarios_from(cfg):
    reps = int(cfg.get("replications", 200))
    seed = int(cfg.get("seed", 0))
    m = int(cfg.get("m", 5000))
    alpha = float(cfg.get("alpha", 0.1))
    scenarios = []
    if cfg.get("preset"):
        if cfg["preset"] not in simlab.PRESETS:
            raise ConfigError(f"unknown preset {cfg['preset']!r}; choose from {simlab.PRESETS}")
        scenarios += simlab.preset_scenarios(cfg["preset"], reps, seed, m, alpha)
    for i, entry in enumerate(cfg.get("scenarios") or []):
        if not isinstance(entry, dict):
            raise ConfigError(f"scenario {i} must be a mapping")
        fields = dict(replications=reps, seed=seed, m=m, alpha=alpha)
        fields.update(entry)
        try:
            scenarios.append(simlab.ScenarioConfig(**fields))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario {i}: {exc}") from exc
    if not scenarios:
        raise ConfigError("no scenarios: give a preset or a scenarios list")
    return scenarios


def _sim_ggmix_config(cfg):
    g = cfg.get("ggmix") or {}
    merged = dict(ANALYSIS_DEFAULTS)
    unknown = set(g) - {"L", "family", "K1", "K2", "zeta2", "lambda"}
    if unknown:
        raise ConfigError(f"unknown ggmix keys: {sorted(unknown)}")
    merged.update(g)
    merged["alpha"] = cfg.get("alpha", 0.1)
    return ggmix_config(merged)


def cmd_simulate(args):
    cfg = load_config(args.config)
    unknown = set(cfg) - SIM_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("preset", "replications", "seed", "m", "alpha", "out_dir", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if args.methods is not None:
        cfg["methods"] = [m for m in args.methods.split(",") if m]
    methods = cfg.get("methods", ["ggmix"])
    if not methods:
        raise ConfigError("methods list is empty")
    bad = [m for m in methods if m not in simlab.METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {simlab.METHODS}")
    scenarios = _scenarios_from(cfg)
    gcfg = _sim_ggmix_config(cfg)
    out_dir = cfg.get("out_dir") or "."
    threads = int(cfg.get("threads") or 0)
    result = simlab.run_grid(scenarios, methods, gcfg, n_jobs=threads if threads else -1,
                             progress=args.progress)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    _write(out_dir, "records.csv", result.records_csv(timings=not args.no_timing), written)
    _write(out_dir, "summary.csv", result.summary_csv(), written)
    echo = dict(cfg, methods=methods, n_scenarios=len(scenarios), ggmix=gcfg.to_dict())
    _write(out_dir, "manifest.json", dump_json(manifest("simulate", echo, written)), written)
    flagged = [r for r in result.reports if r.flagged]
    for r in flagged:
        logger.warning("%s/%s: %d failed replications", r.scenario.scenario_id, r.method, r.failed)
    print(f"{len(scenarios)} scenarios x {len(methods)} methods -> {len(result.records)} records")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ggmix", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def analysis_args(sp):
        sp.add_argument("--config", help="YAML config file; flags override it")
        sp.add_argument("--input", help="comma- or tab-delimited table, one row per hypothesis")
        sp.add_argument("--x-col", dest="x_col")
        sp.add_argument("--s2-col", dest="s2_col")
        sp.add_argument("--id-col", dest="id_col")
        sp.add_argument("--nu", type=float, help="degrees of freedom of s2")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--lambda", dest="lambda", type=float, help="null-proportion penalty")
        sp.add_argument("--L", dest="L", type=int, help="variance grid size")
        sp.add_argument("--family", choices=[f for f in FAMILIES if f != "custom"])
        sp.add_argument("--K1", dest="K1", type=int)
        sp.add_argument("--K2", dest="K2", type=int)
        sp.add_argument("--zeta2", type=float)
        sp.add_argument("--threads", type=int, help="0 = library default")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir")

    analysis_args(sub.add_parser("analyze", help="fit priors and decide on a summary table"))
    analysis_args(sub.add_parser("fit", help="fit priors only"))

    sp = sub.add_parser("simulate", help="run a simulation grid")
    sp.add_argument("config", nargs="?", help="YAML scenario config")
    sp.add_argument("--preset", choices=simlab.PRESETS)
    sp.add_argument("--reps", dest="replications", type=int)
    sp.add_argument("--methods", help=f"comma-separated subset of {','.join(simlab.METHODS)}")
    sp.add_argument("--m", dest="m", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, help="worker processes, 0 = all cores")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--no-timing", action="store_true", help="leave runtime_ms blank")
    sp.add_argument("--progress", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        command = {"analyze": cmd_analyze, "fit": cmd_fit, "simulate": cmd_simulate}
        return command[args.command](args)
    except (ConfigError, InputError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"ggmix {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
