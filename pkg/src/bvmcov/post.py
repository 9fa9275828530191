"""Posterior samplers, graph-constrained MLE and graph estimation.

Exact samplers cover the conjugate pairs (inverse-Wishart, G-Wishart);
the scale-mixture priors use Gibbs samplers.  Draws are returned as
``PosteriorDraws`` holding a ``(N, p, p)`` stack.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import special

from . import matcore
from .dist import (
    GWishartParams,
    clique_assemble,
    lognorm_from_tree,
    gwishart_logpdf,
    gwishart_sample,
    invwishart_logpdf,
    invwishart_sample,
    wishart_sample,
    WishartParams,
)
from .graph import UGraph, enumerate_decomposable, perfect_sequence, is_decomposable
from .prior import GraphPrior, log_graph_prior

DEFAULT_BURNIN = 0.2


# ---------------------------------------------------------------- containers


def ess(x):
    """Effective sample size of a scalar chain (Geyer initial positive sequence)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    s = 0.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        s += pair
    tau = max(2 * s - 1, 1.0 / n)
    return float(min(n / tau, n))


@dataclass(frozen=True)
class PosteriorDraws:
    """Posterior draws on the Sigma or Omega scale."""

    draws: np.ndarray
    scale: str
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scale not in ("sigma", "omega"):
            raise ValueError("scale must be 'sigma' or 'omega'")
        d = np.asarray(self.draws, dtype=float)
        if d.ndim != 3 or d.shape[1] != d.shape[2]:
            raise ValueError("draws must have shape (N, p, p)")
        object.__setattr__(self, "draws", d)

    def __len__(self):
        return self.draws.shape[0]

    @property
    def p(self):
        return self.draws.shape[1]

    def inverted(self):
        other = "omega" if self.scale == "sigma" else "sigma"
        return PosteriorDraws(np.linalg.inv(self.draws), other, self.diagnostics, self.provenance)


def _chain_diagnostics(draws, extra=None):
    diag = {"ess_diag": [ess(draws[:, i, i]) for i in range(draws.shape[1])]}
    diag["min_ess"] = float(min(diag["ess_diag"]))
    if extra:
        diag.update(extra)
    return diag


def _check_data(n, S, p=None):
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return None if S is None else matcore.check_symmetric(S)
    S = matcore.check_symmetric(S)
    if p is not None and S.shape != (p, p):
        raise ValueError("S has the wrong shape")
    if not matcore.is_positive_definite(S):
        raise ValueError("sample covariance is singular (need n > p)")
    return S


# ---------------------------------------------------------------- inverse-Wishart


@dataclass(frozen=True)
class IWPosterior:
    """Sigma | Y ~ IW(nu_post + p - 1, psi_post) with nu_post = nu + n, psi_post = psi1 + nS."""

    nu: float
    psi: np.ndarray

    @property
    def p(self):
        return self.psi.shape[0]

    def sample(self, rng, size=1):
        d = invwishart_sample(self.nu, self.psi, rng, size)
        return PosteriorDraws(d, "sigma", {}, {"family": "IW", "nu": self.nu})

    def logpdf(self, sigma):
        return invwishart_logpdf(self.nu, self.psi, sigma)

    def mean(self):
        # textbook df nu + p - 1; mean psi / (df - p - 1)
        return self.psi / (self.nu - 2)


def iw_posterior(nu, psi1, n, S):
    psi1 = matcore.check_symmetric(psi1)
    S = _check_data(n, S, psi1.shape[0])
    if n == 0:
        return IWPosterior(float(nu), psi1)
    return IWPosterior(float(nu + n), psi1 + n * S)


# ---------------------------------------------------------------- Gibbs samplers


def _slice_log(logf, x0, rng, width=1.0, max_steps=50):
    """One univariate slice-sampling update (stepping out, then shrinkage)."""
    f0 = logf(x0)
    if not math.isfinite(f0):
        raise FloatingPointError("slice sampler started outside the support")
    y = f0 + math.log(rng.uniform())
    left = x0 - width * rng.uniform()
    right = left + width
    j = int(rng.integers(max_steps))
    k = max_steps - 1 - j
    while j > 0 and logf(left) > y:
        left -= width
        j -= 1
    while k > 0 and logf(right) > y:
        right += width
        k -= 1
    evals = 0
    while True:
        evals += 1
        x1 = left + (right - left) * rng.uniform()
        if logf(x1) > y:
            return x1, evals
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left < 1e-14:
            raise FloatingPointError("degenerate slice")


def dsiw_gibbs(spec, n, S, iters, rng, burnin=DEFAULT_BURNIN, init=None):
    """Gibbs sampler for the DSIW posterior.

    Sigma | Delta, Y ~ IW(nu + n + p - 1, c Delta + nS); each delta_i | Sigma
    has density proportional to delta^a exp(-c (Sigma^-1)_ii delta / 2) pi_i(delta)
    with a = (nu + p - 1)/2.  That is a gamma law for the shape-2 gamma
    mixing and is slice sampled on log(delta) otherwise.
    """
    p = spec.p
    S = _check_data(n, S, p)
    nS = np.zeros((p, p)) if n == 0 else n * S
    a = spec.mix_exponent
    c = spec.c_nu
    delta = np.array([_mix_start(m) for m in spec.mixing]) if init is None else np.asarray(init, float)
    keep_from = int(math.floor(burnin * iters))
    out = np.empty((iters - keep_from, p, p))
    deltas = np.empty((iters - keep_from, p))
    slice_evals = 0
    for it in range(iters):
        sigma = invwishart_sample(spec.nu + n, c * np.diag(delta) + nS, rng, 1)[0]
        prec_diag = np.diag(np.linalg.inv(sigma))
        for i, mix in enumerate(spec.mixing):
            cx = c * prec_diag[i]
            if mix.tag == "gamma2":
                delta[i] = rng.gamma(a + 2, 1.0 / (mix.params[0] + 0.5 * cx))
            else:
                def logf(t, cx=cx, mix=mix):
                    if t > 700:
                        return -math.inf
                    return (a + 1) * t - 0.5 * cx * math.exp(t) + float(mix.logpdf(math.exp(t)))
                t, ev = _slice_log(logf, math.log(delta[i]), rng)
                delta[i] = math.exp(t)
                slice_evals += ev
        if it >= keep_from:
            out[it - keep_from] = sigma
            deltas[it - keep_from] = delta
    diag = _chain_diagnostics(out, {"slice_evals_per_update": slice_evals / max(iters * p, 1),
                                    "burnin": keep_from})
    diag["delta_mean"] = deltas.mean(axis=0).tolist()
    return PosteriorDraws(out, "sigma", diag, {"family": "DSIW", "n": n})


def _mix_start(mix):
    lo, hi = mix.support()
    if math.isfinite(hi):
        return 0.5 * (lo + hi)
    if mix.tag == "gamma2":
        return 2.0 / mix.params[0]
    if mix.tag == "lognormal":
        return math.exp(mix.params[0])
    return max(mix.params[0], mix.params[1])


def matrixf_gibbs(nu, nu_star, psi2, n, S, iters, rng, burnin=DEFAULT_BURNIN, init=None):
    """Gibbs sampler for the matrix-F posterior.

    Sigma | D, Y ~ IW(nu + n + p - 1, D + nS) and
    D | Sigma ~ W(nu_star + nu + p - 1, (Sigma^-1 + psi2^-1)^-1).
    """
    psi2 = matcore.check_symmetric(psi2)
    p = psi2.shape[0]
    S = _check_data(n, S, p)
    nS = np.zeros((p, p)) if n == 0 else n * S
    psi2_inv = np.linalg.inv(psi2)
    dbar = nu_star * psi2 if init is None else np.asarray(init, float)
    df = nu_star + nu + p - 1
    keep_from = int(math.floor(burnin * iters))
    out = np.empty((iters - keep_from, p, p))
    for it in range(iters):
        sigma = invwishart_sample(nu + n, dbar + nS, rng, 1)[0]
        scale = matcore.symmetrize(np.linalg.inv(np.linalg.inv(sigma) + psi2_inv))
        dbar = wishart_sample(WishartParams(df, scale), rng, 1)[0]
        if it >= keep_from:
            out[it - keep_from] = sigma
    diag = _chain_diagnostics(out, {"burnin": keep_from})
    return PosteriorDraws(out, "sigma", diag, {"family": "MatrixF", "n": n})


# ---------------------------------------------------------------- G-Wishart


@dataclass(frozen=True)
class GWishartPosterior:
    params: GWishartParams

    def sample(self, rng, size=1):
        d = gwishart_sample(self.params, rng, size)
        return PosteriorDraws(d, "omega", {}, {"family": "GWishart", "beta": self.params.beta})

    def logpdf(self, omega):
        return gwishart_logpdf(self.params, omega)


def gwishart_posterior(graph, beta, psi3, n, S):
    """Omega | Y ~ W_G(beta + n, psi3 + nS)."""
    if not is_decomposable(graph):
        raise ValueError("G-Wishart posterior needs a decomposable graph")
    S = _check_data(n, S, graph.p) if n > 0 else None
    psi = np.asarray(psi3, float) if n == 0 else psi3 + n * S
    return GWishartPosterior(GWishartParams(graph, beta + n, psi))


# ---------------------------------------------------------------- MLE


@dataclass(frozen=True)
class MleResult:
    estimate: np.ndarray
    residual: float
    iterations: int = 0


def stationarity_residual(omega, S, graph):
    """max |(omega^-1 - S)_ij| over the diagonal and the edges."""
    diff = np.linalg.inv(omega) - S
    keep = graph.adjacency() | np.eye(graph.p, dtype=bool)
    return float(np.max(np.abs(diff[keep])))


def mle_graph(graph, S, ordering=None):
    """Closed-form MLE of Omega in P_G for decomposable G.

    sum over cliques of pad(S_CC^-1) minus sum over separators of pad(S_SS^-1).
    Entries off the graph are exactly zero.
    """
    S = matcore.check_symmetric(S)
    tree = perfect_sequence(graph, ordering)
    for c in tree.cliques:
        idx = sorted(c)
        if not matcore.is_positive_definite(S[np.ix_(idx, idx)]):
            raise ValueError(f"clique submatrix of S is singular: clique {[i + 1 for i in idx]}")
    est = clique_assemble(S, tree)
    off = ~(graph.adjacency() | np.eye(graph.p, dtype=bool))
    est[off] = 0.0
    return MleResult(est, stationarity_residual(est, S, graph), 0)


def ips_mle(graph, S, tol=1e-12, max_iter=10000):
    """Iterative proportional scaling over the cliques (independent oracle)."""
    S = matcore.check_symmetric(S)
    tree = perfect_sequence(graph)
    cliques = [sorted(c) for c in tree.cliques]
    omega = np.diag(1.0 / np.diag(S))
    for it in range(1, max_iter + 1):
        for idx in cliques:
            ix = np.ix_(idx, idx)
            sig = np.linalg.inv(omega)
            omega[ix] += np.linalg.inv(S[ix]) - np.linalg.inv(sig[ix])
            omega = matcore.symmetrize(omega)
        res = stationarity_residual(omega, S, graph)
        if res < tol:
            break
    return MleResult(omega, res, it)


# ---------------------------------------------------------------- graph estimation


def partial_correlations(S):
    k = np.linalg.inv(S)
    d = np.sqrt(np.diag(k))
    pc = -k / np.outer(d, d)
    np.fill_diagonal(pc, 1.0)
    return pc


def ridge(S, n):
    """S + lambda I with lambda = 1e-6 tr(S)/p when S is not safely invertible."""
    p = S.shape[0]
    if n <= p or not matcore.is_positive_definite(S):
        return S + 1e-6 * np.trace(S) / p * np.eye(p)
    return S


def graph_estimate(S, n, c=3.0):
    """Edges where |partial correlation| exceeds c sqrt(log p / n).

    The result may be non-decomposable.
    """
    S = matcore.check_symmetric(S)
    p = S.shape[0]
    if p < 2:
        return UGraph(p)
    pc = partial_correlations(ridge(S, n))
    thr = c * math.sqrt(math.log(p) / n)
    adj = np.abs(pc) > thr
    np.fill_diagonal(adj, False)
    return UGraph.from_adjacency(adj)


# ---------------------------------------------------------------- exact graph posterior


def log_marginal_likelihood(graph, beta, psi3, n, S, tree=None):
    """log p(Y | G) up to the G-free factor (2 pi)^(-np/2)."""
    if n == 0:
        return 0.0
    tree = perfect_sequence(graph) if tree is None else tree
    return (lognorm_from_tree(tree, beta + n, psi3 + n * S)
            - lognorm_from_tree(tree, beta, psi3))


@lru_cache(maxsize=None)
def _decomposable_with_trees(p):
    return tuple((g, perfect_sequence(g)) for g in enumerate_decomposable(p))


def _subset_lognorm(beta, d):
    """Memoized clique normalizers keyed by vertex subset."""
    memo = {}

    def f(subset):
        if not subset:
            return 0.0
        v = memo.get(subset)
        if v is None:
            idx = sorted(subset)
            c = len(idx)
            m = beta + c + 1
            v = (0.5 * m * c * math.log(2) + special.multigammaln(0.5 * m, c)
                 - 0.5 * m * float(np.linalg.slogdet(d[np.ix_(idx, idx)])[1]))
            memo[subset] = v
        return v

    return f


def _tree_lognorm(tree, f):
    return sum(f(c) for c in tree.cliques) - sum(f(s) for s in tree.separators)


def exact_graph_posterior(n, S, beta, psi3, tau=1.0, R=None, p=None):
    """Posterior over every decomposable graph (p <= 5) under the hierarchical prior.

    Returns ``(graphs, probabilities)`` with probabilities summing to one.
    """
    psi3 = matcore.check_symmetric(psi3)
    p = psi3.shape[0] if p is None else p
    if p > 5:
        raise ValueError("exact enumeration is limited to p <= 5")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if n > 0:
        S = _check_data(n, S, p)
    gp = GraphPrior(p, tau, R)
    pairs = [(g, t) for g, t in _decomposable_with_trees(p) if g.n_edges <= gp.R]
    graphs = [g for g, _ in pairs]
    logw = np.array([log_graph_prior(g, gp.tau, gp.R) for g in graphs])
    if n > 0:
        f_post = _subset_lognorm(beta + n, psi3 + n * S)
        f_prior = _subset_lognorm(beta, psi3)
        logw = logw + np.array([_tree_lognorm(t, f_post) - _tree_lognorm(t, f_prior) for _, t in pairs])
    prob = np.exp(logw - special.logsumexp(logw))
    prob /= prob.sum()
    return graphs, prob


# ---------------------------------------------------------------- centering


ANCHOR_TAGS = {"S": "T1", "S_inv": "T2", "mle_G": "T3", "mle_Ghat": "T4"}


@dataclass(frozen=True)
class Centered:
    T: np.ndarray
    anchor: np.ndarray
    n: int
    tag: str

    def restore(self):
        return self.anchor + self.T / math.sqrt(self.n)


def center(draws, anchor, n, anchor_type="S"):
    """T = sqrt(n) (theta - anchor), tagged T1..T4 by anchor type."""
    if anchor_type not in ANCHOR_TAGS:
        raise ValueError(f"anchor_type must be one of {sorted(ANCHOR_TAGS)}")
    theta = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    anchor = np.asarray(anchor, float)
    if theta.shape[-2:] != anchor.shape:
        raise ValueError("anchor dimension does not match the draws")
    if n <= 0:
        raise ValueError("n must be positive")
    return Centered(math.sqrt(n) * (theta - anchor), anchor, n, ANCHOR_TAGS[anchor_type])


# ---------------------------------------------------------------- draw dumps


def write_draws(draws, csv_path, meta=None):
    """vech of each draw per CSV row (1-based coordinate labels) plus a JSON sidecar."""
    csv_path = Path(csv_path)
    p = draws.p
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(matcore.vech_labels(p))
        for row in matcore.vech(draws.draws):
            w.writerow(["%.17g" % v for v in row])
    side = {"scale": draws.scale, "p": p, "n_draws": len(draws),
            "diagnostics": draws.diagnostics, "provenance": draws.provenance}
    if meta:
        side.update(meta)
    csv_path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=float))


def read_draws(csv_path):
    csv_path = Path(csv_path)
    with csv_path.open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    p = matcore.triangular_root(len(header))
    if header != matcore.vech_labels(p):
        raise ValueError(f"{csv_path}: unexpected header")
    vals = np.array([[float(x) for x in r] for r in body]).reshape(-1, len(header))
    side = json.loads(csv_path.with_suffix(".json").read_text())
    return PosteriorDraws(matcore.vech_inverse(vals), side["scale"], side.get("diagnostics", {}),
                          side.get("provenance", {}))
