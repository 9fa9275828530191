"""Truth generators, prior construction and per-scenario metadata."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import matcore
from ..graph import UGraph, complete, is_decomposable, min_graph_stats
from ..prior import (DSIWPrior, FlatPrior, GraphPrior, GWishartPrior, HierGWishartPrior, IWPrior,
                     MatrixFPrior, MixingFamily)
from .config import ConfigError, parse_mixing, read_matrix

SUPPORT_TOL = 1e-10


@dataclass(frozen=True)
class Truth:
    sigma: np.ndarray
    omega: np.ndarray
    graph: UGraph

    @property
    def p(self):
        return self.sigma.shape[0]


def support_graph(omega, tol=SUPPORT_TOL):
    adj = np.abs(omega) > tol
    np.fill_diagonal(adj, False)
    return UGraph.from_adjacency(adj)


def _banded(p, k, diag, off):
    om = diag * np.eye(p)
    for i in range(p):
        for j in range(max(0, i - k), i):
            om[i, j] = om[j, i] = off
    return om


def _star(p, diag, off, hub_diag):
    om = diag * np.eye(p)
    om[0, 0] = hub_diag
    om[0, 1:] = om[1:, 0] = off
    return om


def make_truth(cfg, p):
    """Sigma_0, Omega_0 and G_0 for dimension p.

    ``ar1`` fixes Sigma_0; the other generators fix Omega_0.  A ``custom``
    file holds Sigma_0 for the unstructured-sigma kind and Omega_0 otherwise.
    G_0 is the support of Omega_0.
    """
    t = cfg.truth
    gen = t["generator"]
    if gen == "ar1":
        sigma = matcore.ar1(p, t.get("rho", 0.5))
        omega = None
    elif gen in ("banded-precision", "path"):
        k = 1 if gen == "path" else t.get("k", 1)
        if p > 1 and not 0 <= k < p:
            raise ConfigError(f"bandwidth k={k} does not fit p={p}", "[truth] k")
        omega = _banded(p, k, t.get("diag", 1.0), t.get("offdiag", 0.3))
        sigma = None
    elif gen == "star":
        omega = _star(p, t.get("diag", 1.0), t.get("offdiag", 0.3), t.get("hub_diag", t.get("diag", 1.0)))
        sigma = None
    else:
        m = read_matrix(t["file"])
        if m.shape != (p, p):
            raise ConfigError(f"custom truth is {m.shape[0]}x{m.shape[0]} but p={p}", "[truth] file")
        if cfg.kind == "unstructured-sigma":
            sigma, omega = m, None
        else:
            sigma, omega = None, m
    mat = sigma if sigma is not None else omega
    if not matcore.is_positive_definite(matcore.check_symmetric(mat)):
        raise ConfigError("truth matrix is not positive definite", "[truth]")
    if sigma is None:
        omega = matcore.symmetrize(omega)
        sigma = matcore.symmetrize(np.linalg.inv(omega))
    else:
        sigma = matcore.symmetrize(sigma)
        omega = matcore.symmetrize(np.linalg.inv(sigma))
        # ar1 precision is tridiagonal up to rounding
        omega = np.where(np.abs(omega) > 1e-12, omega, 0.0)
    g = support_graph(omega)
    if cfg.kind in ("graph-known", "graph-unknown") and not is_decomposable(g):
        raise ConfigError("support of Omega_0 is not decomposable", "[truth]")
    return Truth(sigma, omega, g)


def scenario_graph(cfg, truth):
    """Graph whose complexity statistics enter the rates (complete when unstructured)."""
    if cfg.kind.startswith("unstructured"):
        return complete(truth.p)
    return truth.graph


@dataclass(frozen=True)
class RateInfo:
    d: int
    aG: int
    edges: int

    def spectral_sq(self, n, p):
        return min(self.aG, self.d ** 4) * math.log(p) / n if p > 1 else 1.0 / n

    def frobenius_sq(self, n, p):
        return (p + self.edges) * math.log(p) / n if p > 1 else 1.0 / n

    def assumption_h(self, n, p):
        lp = math.log(p) if p > 1 else 1.0
        return min(p * p * self.aG ** 3, p * p * self.d ** 12, (p + self.edges) ** 3) * lp ** 3 / n


def rate_info(graph):
    st = min_graph_stats(graph)
    return RateInfo(st.d, st.aG, st.edge_count)


def assumption_columns(n, p, info):
    if n <= 0:
        return {"p5_over_n": math.inf, "spec_rate_sq": math.inf, "frob_rate_sq": math.inf,
                "assumption_H": math.inf}
    return {"p5_over_n": p ** 5 / n, "spec_rate_sq": info.spectral_sq(n, p),
            "frob_rate_sq": info.frobenius_sq(n, p), "assumption_H": info.assumption_h(n, p)}


def _mixing(pc, p):
    name, args = parse_mixing(pc.mixing)
    ctor = {"lognormal": MixingFamily.lognormal, "truncnormal": MixingFamily.truncnormal,
            "uniform": MixingFamily.uniform, "gamma2": MixingFamily.gamma2}.get(name)
    if ctor is None:
        raise ConfigError(f"unknown mixing family {name!r}", f"[prior:{pc.label}] mixing")
    try:
        return ctor(*args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), f"[prior:{pc.label}] mixing") from None


def build_prior(pc, p, n=0, graph=None):
    """Prior spec for dimension p; the scale is psi_scale * n^psi_n_power * I."""
    mult = pc.psi_scale * (float(n) ** pc.psi_n_power if pc.psi_n_power else 1.0)
    psi = mult * np.eye(p)
    try:
        if pc.family == "IW":
            return IWPrior(pc.nu, psi)
        if pc.family == "DSIW":
            return DSIWPrior(pc.nu, p, _mixing(pc, p), pc.c_nu)
        if pc.family == "MatrixF":
            return MatrixFPrior(pc.nu, pc.nu_star, psi)
        if pc.family == "GWishart":
            return GWishartPrior(graph if graph is not None else complete(p), pc.beta, psi)
        if pc.family == "HierGWishart":
            return HierGWishartPrior(pc.beta, psi, GraphPrior(p, pc.tau, pc.R))
        return FlatPrior()
    except ValueError as exc:
        raise ConfigError(str(exc), f"[prior:{pc.label}]") from None


def check_prior_kind(cfg):
    """Reject prior families that do not fit the scenario kind."""
    ok = {"unstructured-sigma": ("IW", "DSIW", "MatrixF"),
          "unstructured-omega": ("IW", "DSIW", "MatrixF"),
          "graph-known": ("GWishart",),
          "graph-unknown": ("HierGWishart", "GWishart")}[cfg.kind]
    for pc in cfg.priors:
        if pc.family not in ok:
            raise ConfigError(f"family {pc.family} does not fit kind {cfg.kind} (allowed: {ok})",
                              f"[prior:{pc.label}] family")


__all__ = ["Truth", "make_truth", "support_graph", "scenario_graph", "RateInfo", "rate_info",
           "assumption_columns", "build_prior", "check_prior_kind"]
