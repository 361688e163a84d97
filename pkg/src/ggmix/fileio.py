"""Readers and writers for summary tables, decisions, priors and run manifests."""

import csv
import io
import json
import math
import platform
from datetime import datetime, timezone

import numpy as np

from .effect_prior import EffectMixtureSpec, EffectPrior
from .variance_prior import SummaryTable, VarianceGrid, VariancePrior

SCHEMA_VERSION = 1


class InputError(ValueError):
    """Malformed or invalid input file."""


def sniff_delimiter(header):
    return "\t" if "\t" in header else ","


def read_summary_table(path, nu, x_col="x", s2_col="s2", id_col="id"):
    """Read one hypothesis per row from a comma- or tab-delimited file.

    Returns ``(ids, SummaryTable)``. Row ids come from ``id_col`` when that
    column exists, otherwise they are 1-based row numbers.
    """
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise InputError(f"{path}: empty file or missing header")
    delim = sniff_delimiter(lines[0])
    reader = csv.reader(io.StringIO(text), delimiter=delim)
    header = [h.strip() for h in next(reader)]
    for col in (x_col, s2_col):
        if col not in header:
            raise InputError(f"{path}: column {col!r} not found (have {header})")
    ix, is2 = header.index(x_col), header.index(s2_col)
    iid = header.index(id_col) if id_col in header else None
    ids, xs, s2s, bad, nonpos = [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            bad.append(lineno)
            continue
        try:
            x = float(row[ix])
            s2 = float(row[is2])
        except ValueError:
            bad.append(lineno)
            continue
        if not (math.isfinite(x) and math.isfinite(s2)):
            bad.append(lineno)
            continue
        if s2 <= 0:
            nonpos.append(lineno)
            continue
        ids.append(row[iid].strip() if iid is not None else str(len(ids) + 1))
        xs.append(x)
        s2s.append(s2)
    if bad:
        raise InputError(f"{path}: malformed rows at lines {_abbrev(bad)}")
    if nonpos:
        raise InputError(f"{path}: non-positive {s2_col} at lines {_abbrev(nonpos)}")
    if not xs:
        raise InputError(f"{path}: no data rows")
    return ids, SummaryTable(np.array(xs), np.array(s2s), nu)


def _abbrev(lines, limit=20):
    shown = ", ".join(str(n) for n in lines[:limit])
    return shown + (f" (+{len(lines) - limit} more)" if len(lines) > limit else "")


def _f(v):
    return repr(float(v))


def decisions_csv(ids, tab, lfdr, cond_p, delta):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "x", "s2", "lfdr", "conditional_p", "rejected"])
    for row in zip(ids, tab.x, tab.s2, lfdr, cond_p, delta):
        w.writerow([row[0], _f(row[1]), _f(row[2]), _f(row[3]), _f(row[4]), int(row[5])])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def priors_document(vprior, eprior, nu, report=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "nu": nu,
        "variance_prior": {
            "kappa": vprior.grid.kappa,
            "delta": vprior.delta,
            "diagnostics": vprior.diagnostics,
        },
        "effect_prior": {
            "spec": eprior.spec.to_dict(),
            "pi": eprior.pi,
            "lambda": eprior.lam,
            "diagnostics": eprior.diagnostics,
        },
        "pi0_hat": eprior.pi0,
    }
    if report is not None:
        doc["decision"] = {
            "alpha": report.alpha,
            "tau_star": report.tau_star,
            "rejected_count": report.rejected_count,
        }
    return doc


def load_priors(path_or_text):
    """Rebuild ``(VariancePrior, EffectPrior, nu)`` from a priors JSON document."""
    if isinstance(path_or_text, str) and path_or_text.lstrip().startswith("{"):
        doc = json.loads(path_or_text)
    else:
        with open(path_or_text) as fh:
            doc = json.load(fh)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(f"unsupported priors schema_version {version!r}")
    vp = doc["variance_prior"]
    vprior = VariancePrior(VarianceGrid(np.array(vp["kappa"])), np.array(vp["delta"]),
                           vp.get("diagnostics", {}))
    ep = doc["effect_prior"]
    eprior = EffectPrior(EffectMixtureSpec.from_dict(ep["spec"]), np.array(ep["pi"]),
                         float(ep["lambda"]), ep.get("diagnostics", {}))
    return vprior, eprior, doc["nu"]


def manifest(command, config, artifacts):
    import numpy
    import scipy

    from . import __version__

    return {
        "command": command,
        "config": config,
        "artifacts": sorted(artifacts),
        "versions": {
            "ggmix": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
