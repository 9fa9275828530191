"""results.csv, manifest.json and summary.txt writers and readers.

results.csv columns (fixed order)::

    scenario, command, n, p, replicate, seed, metric, value, se,
    p5_over_n, spec_rate_sq, frob_rate_sq, assumption_H

One row per (grid point, replicate, metric); ``replicate = -1`` rows hold
the mean over replicates with its standard error.  Floats use ``%.10g``;
the assumption columns are blank at n = 0.  Rows are sorted by
(n, p, replicate, metric), so equal runs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

COLUMNS = ("scenario", "command", "n", "p", "replicate", "seed", "metric", "value", "se",
           "p5_over_n", "spec_rate_sq", "frob_rate_sq", "assumption_H")
INT_COLUMNS = ("n", "p", "replicate", "seed")
FLOAT_COLUMNS = ("value", "se", "p5_over_n", "spec_rate_sq", "frob_rate_sq", "assumption_H")


def _fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "" if x > 0 else "-inf"
    return "%.10g" % x


def _fmt_value(x):
    x = float(x)
    return "inf" if x == math.inf else _fmt(x)


def format_results(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        out = []
        for c in COLUMNS:
            v = r[c]
            if c in INT_COLUMNS:
                out.append(str(int(v)))
            elif c in ("value", "se"):
                out.append(_fmt_value(v))
            elif c in FLOAT_COLUMNS:
                out.append(_fmt(v))
            else:
                out.append(str(v))
        w.writerow(out)
    return buf.getvalue()


def write_results(rows, path):
    Path(path).write_text(format_results(rows))


def read_results(path):
    """Parse results.csv back into typed dicts; checks the header."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for rec in rd:
            r = dict(zip(COLUMNS, rec))
            for c in INT_COLUMNS:
                r[c] = int(r[c])
            for c in FLOAT_COLUMNS:
                r[c] = float(r[c]) if r[c] != "" else math.inf
            rows.append(r)
    return rows


def aggregate_table(rows):
    """{(n, p): {metric: (mean, se)}} from the replicate = -1 rows."""
    out = {}
    for r in rows:
        if r["replicate"] == -1:
            out.setdefault((r["n"], r["p"]), {})[r["metric"]] = (r["value"], r["se"])
    return out


def compare_runs(rows_a, rows_b, metric, k=3.0):
    """Per grid point: does |mean_a - mean_b| <= k * combined SE hold for ``metric``?"""
    a, b = aggregate_table(rows_a), aggregate_table(rows_b)
    out = {}
    for key in sorted(set(a) & set(b)):
        if metric in a[key] and metric in b[key]:
            (va, sa), (vb, sb) = a[key][metric], b[key][metric]
            out[key] = (abs(va - vb) <= k * math.hypot(sa, sb), va, vb, math.hypot(sa, sb))
    return out


def versions():
    from .. import __version__
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "bvmcov": __version__, "platform": sys.platform}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, np.generic):
        return x.item()
    return x


def manifest(cfg, result, threads):
    resolved = asdict(cfg)
    resolved.pop("raw", None)
    return _jsonable({
        "command": result.command,
        "config_source": cfg.source,
        "config": cfg.raw,
        "resolved": resolved,
        "versions": versions(),
        "master_seed": cfg.seed,
        "threads": threads,
        "streams": result.streams,
        "failures": result.failures,
        "aborted": result.aborted,
        "checks": [asdict(c) for c in result.checks],
        "wall_time_s": round(result.wall_time, 3),
    })


def summary_text(cfg, result):
    lines = [f"scenario {cfg.name} ({cfg.kind}), command {result.command}, seed {cfg.seed}"]
    for c in result.checks:
        lines.append(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    for f in result.failures:
        lines.append(f"REPLICATE FAILURE n={f['n']} p={f['p']} replicate={f['replicate']}: {f['error']}")
    for a in result.aborted:
        lines.append(f"ABORTED n={a['n']} p={a['p']} ({a['failures']} failed replicates)")
    ok = all(c.passed for c in result.checks) and not result.aborted
    lines.append(f"OVERALL {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"


def write_outputs(cfg, result, out_dir, threads=1):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results(result.rows, out / "results.csv")
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, result, threads), indent=2,
                                                  sort_keys=True) + "\n")
    (out / "summary.txt").write_text(summary_text(cfg, result))
    return out
