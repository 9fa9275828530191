"""Experiment configuration: INI files read with configparser.

Sections
--------
[scenario]   name, kind (unstructured-sigma | unstructured-omega | graph-known | graph-unknown)
[truth]      generator (ar1 | banded-precision | star | path | custom) and its numbers
[prior] or [prior:<label>]   family and hyperparameters (several allowed for ``flatness``)
[grid]       n (comma list), p (int, comma list matching n, or ``joint``)
[mc]         replicates, draws, gibbs_iters, seed
[divergence] methods, alphas, directions
[contraction], [coverage], [flatness], [graph_select]   command options
[acceptance] optional pass/fail bands
[output]     dir
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SCENARIOS = ("unstructured-sigma", "unstructured-omega", "graph-known", "graph-unknown")
GENERATORS = ("ar1", "banded-precision", "star", "path", "custom")
FAMILIES = ("IW", "DSIW", "MatrixF", "GWishart", "HierGWishart", "Flat")


class ConfigError(ValueError):
    """Malformed configuration; carries a location string for diagnostics."""

    def __init__(self, msg, where=""):
        self.where = where
        super().__init__(f"{where}: {msg}" if where else msg)


@dataclass(frozen=True)
class PriorConfig:
    label: str
    family: str
    nu: float = 3.0
    nu_star: float = 3.0
    psi_scale: float = 1.0
    psi_n_power: float = 0.0
    beta: float = 3.0
    mixing: str = "gamma2(1)"
    c_nu: Optional[float] = None
    tau: float = 1.0
    R: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    truth: dict
    priors: tuple
    grid: tuple
    replicates: int
    draws: int
    gibbs_iters: int
    seed: int
    divergence: dict
    options: dict
    acceptance: dict
    out_dir: str
    source: str = ""
    raw: dict = field(default_factory=dict)

    @property
    def prior(self):
        return self.priors[0]

    def section(self, name):
        return self.options.get(name, {})


def _line_of(text, section, key):
    cur = None
    for k, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
            continue
        if cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return k
    return None


class _Reader:
    def __init__(self, cp, text, path):
        self.cp = cp
        self.text = text
        self.path = path

    def where(self, section, key=None):
        if key is None:
            return f"{self.path}: [{section}]"
        ln = _line_of(self.text, section, key)
        loc = f"line {ln}, " if ln else ""
        return f"{self.path}: {loc}[{section}] {key}"

    def get(self, section, key, conv=str, default=..., check=None, msg="invalid value"):
        if not self.cp.has_option(section, key):
            if default is ...:
                raise ConfigError("missing required field", self.where(section, key))
            return default
        raw = self.cp.get(section, key).strip()
        try:
            val = conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"cannot parse {raw!r} ({exc})", self.where(section, key)) from None
        if check is not None and not check(val):
            raise ConfigError(f"{msg}: {raw!r}", self.where(section, key))
        return val


def float_list(s):
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def int_list(s):
    out = []
    for x in s.replace(";", ",").split(","):
        x = x.strip()
        if x:
            v = float(x)
            if v != int(v):
                raise ValueError(f"{x} is not an integer")
            out.append(int(v))
    return tuple(out)


def str_list(s):
    return tuple(x.strip() for x in s.replace(";", ",").split(",") if x.strip())


def _opt_float(s):
    return None if s.lower() in ("", "none", "auto") else float(s)


def _opt_int(s):
    return None if s.lower() in ("", "none", "auto") else int(s)


def joint_p(n):
    """Joint-growth track p = ceil(n^(1/6))."""
    return max(2, math.ceil(n ** (1.0 / 6.0) - 1e-12))


def _read_prior(r, section, label):
    fam = r.get(section, "family", str, check=lambda v: v in FAMILIES,
                msg=f"family must be one of {FAMILIES}")
    return PriorConfig(
        label=label,
        family=fam,
        nu=r.get(section, "nu", float, 3.0, lambda v: v > 0, "nu must be positive"),
        nu_star=r.get(section, "nu_star", float, 3.0, lambda v: v > 0, "nu_star must be positive"),
        psi_scale=r.get(section, "psi_scale", float, 1.0, lambda v: v > 0, "psi_scale must be positive"),
        psi_n_power=r.get(section, "psi_n_power", float, 0.0),
        beta=r.get(section, "beta", float, 3.0, lambda v: v > 0, "beta must be positive"),
        mixing=r.get(section, "mixing", str, "gamma2(1)"),
        c_nu=r.get(section, "c_nu", _opt_float, None),
        tau=r.get(section, "tau", float, 1.0, lambda v: v > 0, "tau must be positive"),
        R=r.get(section, "R", _opt_int, None),
    )


def parse_mixing(spec):
    """'lognormal(0,1)' -> ('lognormal', (0.0, 1.0))."""
    m = re.fullmatch(r"\s*([A-Za-z0-9_]+)\s*\(([^)]*)\)\s*", spec)
    if not m:
        raise ValueError(f"mixing must look like name(a, b), got {spec!r}")
    return m.group(1).lower(), float_list(m.group(2))


def load_config(path, overrides=None):
    """Parse and validate a configuration file; raises ConfigError on problems."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", str(path))
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " "), str(path)) from None
    return _build(cp, text, str(path), overrides or {})


def _build(cp, text, path, overrides):
    r = _Reader(cp, text, path)
    for sec in ("scenario", "truth", "grid", "mc"):
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]", path)

    name = r.get("scenario", "name", str)
    kind = r.get("scenario", "kind", str, check=lambda v: v in SCENARIOS,
                 msg=f"kind must be one of {SCENARIOS}")

    gen = r.get("truth", "generator", str, check=lambda v: v in GENERATORS,
                msg=f"generator must be one of {GENERATORS}")
    truth = {"generator": gen}
    for key in ("rho", "diag", "offdiag", "hub_diag"):
        if cp.has_option("truth", key):
            truth[key] = r.get("truth", key, float)
    for key in ("k",):
        if cp.has_option("truth", key):
            truth[key] = r.get("truth", key, int, check=lambda v: v >= 0, msg="must be >= 0")
    if cp.has_option("truth", "file"):
        f = Path(r.get("truth", "file", str))
        if not f.is_absolute():
            f = Path(path).parent / f
        truth["file"] = str(f)
    if gen == "custom" and "file" not in truth:
        raise ConfigError("custom truth needs a file", r.where("truth"))
    if gen == "ar1" and not -1 < truth.get("rho", 0.5) < 1:
        raise ConfigError("rho must lie in (-1, 1)", r.where("truth", "rho"))

    prior_secs = [s for s in cp.sections() if s == "prior" or s.startswith("prior:")]
    if not prior_secs:
        raise ConfigError("missing section [prior]", path)
    priors = tuple(_read_prior(r, s, s.split(":", 1)[1].strip() if ":" in s else "prior")
                   for s in prior_secs)

    ns = r.get("grid", "n", int_list, check=lambda v: len(v) > 0 and all(x >= 0 for x in v),
               msg="n must be a nonempty list of nonnegative integers")
    praw = r.get("grid", "p", str).strip()
    if praw == "joint":
        ps = tuple(joint_p(n) for n in ns)
    else:
        try:
            ps = int_list(praw)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {praw!r} ({exc})", r.where("grid", "p")) from None
        if len(ps) == 1:
            ps = ps * len(ns)
        if len(ps) != len(ns) or any(p < 1 for p in ps):
            raise ConfigError("p must be one positive integer, one per n, or 'joint'",
                              r.where("grid", "p"))
    grid = tuple(zip(ns, ps))
    # asymptotic grids need n > p; graph-select may include n = 0
    require_np = r.get("grid", "require_n_gt_p", lambda s: s.lower() in ("1", "true", "yes"), True)
    if require_np:
        for n, p in grid:
            if not n > p:
                raise ConfigError(f"grid point (n={n}, p={p}) needs n > p", r.where("grid", "n"))

    replicates = r.get("mc", "replicates", int, check=lambda v: v >= 1, msg="replicates must be >= 1")
    draws = r.get("mc", "draws", int, 5000, lambda v: v >= 10, "draws must be >= 10")
    gibbs_iters = r.get("mc", "gibbs_iters", int, 2000, lambda v: v >= 10, "gibbs_iters must be >= 10")
    seed = r.get("mc", "seed", int, 20240611, lambda v: v >= 0, "seed must be nonnegative")

    div = {"methods": ("tv", "hellinger", "d_alpha", "renyi"), "alphas": (0.5,), "directions": 100}
    if cp.has_section("divergence"):
        div["methods"] = r.get("divergence", "methods", str_list, div["methods"])
        div["alphas"] = r.get("divergence", "alphas", float_list, div["alphas"],
                              lambda v: all(0 < a < 1 for a in v), "alphas must lie in (0, 1)")
        div["directions"] = r.get("divergence", "directions", int, 100, lambda v: v >= 1)

    options = {}
    for sec in ("contraction", "coverage", "flatness", "graph_select", "graph"):
        if cp.has_section(sec):
            options[sec] = {k: cp.get(sec, k).strip() for k in cp.options(sec)}
    _check_options(r, options)

    acceptance = {}
    if cp.has_section("acceptance"):
        for k in cp.options("acceptance"):
            acceptance[k] = r.get("acceptance", k, float_list)

    out_dir = r.get("output", "dir", str, f"out/{name}") if cp.has_section("output") else f"out/{name}"

    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    cfg = dict(name=name, kind=kind, truth=truth, priors=priors, grid=grid, replicates=replicates,
               draws=draws, gibbs_iters=gibbs_iters, seed=seed, divergence=div, options=options,
               acceptance=acceptance, out_dir=out_dir, source=path, raw=raw)
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    return ExperimentConfig(**cfg)


_OPTION_TYPES = {
    "contraction": {"multipliers": float_list, "misuse_multiplier": float},
    "coverage": {"levels": float_list, "functionals": str_list},
    "flatness": {"budget": int, "radii": int, "polish_rounds": int, "eps": str},
    "graph_select": {"tau_sweep": float_list},
    "graph": {"ghat": str, "c": float},
}


def _check_options(r, options):
    for sec, vals in options.items():
        types = _OPTION_TYPES.get(sec, {})
        for k, raw in vals.items():
            conv = types.get(k)
            if conv is None:
                raise ConfigError("unknown option", r.where(sec, k))
            try:
                conv(raw)
            except ValueError as exc:
                raise ConfigError(f"cannot parse {raw!r} ({exc})", r.where(sec, k)) from None
    g = options.get("graph", {})
    if g.get("ghat", "estimate") not in ("estimate", "truth"):
        raise ConfigError("ghat must be 'estimate' or 'truth'", r.where("graph", "ghat"))
    for lv in float_list(options.get("coverage", {}).get("levels", "0.9")):
        if not 0 < lv < 1:
            raise ConfigError("levels must lie in (0, 1)", r.where("coverage", "levels"))


def parse_functional(s):
    """'sigma_11' or 'omega_21' -> (scale, i, j) with 0-based indices."""
    m = re.fullmatch(r"(sigma|omega)_(\d+),?(\d+)", s.replace("(", "").replace(")", ""))
    if not m:
        raise ValueError(f"functional must look like sigma_11 or omega_2,1; got {s!r}")
    i, j = int(m.group(2)) - 1, int(m.group(3)) - 1
    return m.group(1), max(i, j), min(i, j)


def read_matrix(path):
    """Whitespace- or comma-separated square matrix."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append([float(x) for x in re.split(r"[,\s]+", line)])
    a = np.array(rows)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{path}: matrix must be square")
    return a
