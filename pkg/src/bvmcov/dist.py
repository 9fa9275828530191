"""Samplers and normalized log-densities.

Covers Gaussian data, Wishart, inverse-Wishart, decomposable G-Wishart and
the (sparse) symmetric matrix-normal laws.  Every sampler takes a numpy
``Generator`` and an optional ``size`` and returns stacked ``(size, p, p)``
arrays.

Parameter conventions
---------------------
* ``wishart_*`` use the textbook degrees of freedom ``df`` and scale ``V``:
  density ``det(X)^((df-p-1)/2) exp(-tr(V^-1 X)/2)``.
* ``invwishart_*`` take the stored hyperparameter ``nu`` of the prior
  ``IW(nu+p-1, psi)``: density ``det(S)^(-(nu+2p)/2) exp(-tr(psi S^-1)/2)``,
  i.e. textbook df ``nu + p - 1``.
* G-Wishart ``W_G(beta, psi)`` has density
  ``det(O)^(beta/2) exp(-tr(psi O)/2)`` on P_G, so a clique of size c
  carries textbook df ``beta + c + 1``.

Densities are with respect to Lebesgue measure on the free coordinates
(vech, or vech* for a graph).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import multigammaln

from . import matcore
from .graph import JunctionTree, UGraph, perfect_sequence, mcs_decomposable

LOG2PI = math.log(2 * math.pi)


def rng_stream(master_seed, *stream_id):
    """Counter-based (Philox) generator keyed by a master seed and a stream id."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.Philox(ss))


def _chol(a):
    try:
        return np.linalg.cholesky(matcore.symmetrize(a))
    except np.linalg.LinAlgError:
        # re-run the checked factorization for the offending minor
        matcore.cholesky(a)
        raise


def _spd(a, name="matrix"):
    a = matcore.check_symmetric(a)
    if not matcore.is_positive_definite(a):
        raise ValueError(f"{name} is not positive definite")
    return a


def _tr_prod(a, x):
    """tr(a @ x) for a fixed matrix a against a stack x."""
    return np.einsum("ij,...ji->...", a, x)


# ---------------------------------------------------------------- data


def mvn_sample(sigma, n, rng):
    """n i.i.d. rows from N_p(0, sigma)."""
    low = _chol(sigma)
    z = rng.standard_normal((n, low.shape[0]))
    return z @ low.T


def sample_cov(y):
    """S = (1/n) sum_i y_i y_i^T (known zero mean)."""
    y = np.asarray(y, dtype=float)
    return y.T @ y / y.shape[0]


def sample_cov_from(sigma, n, rng):
    return sample_cov(mvn_sample(sigma, n, rng))


# ---------------------------------------------------------------- Wishart


@dataclass(frozen=True)
class WishartParams:
    df: float
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scale", _spd(self.scale, "Wishart scale"))
        if not self.df > 0:
            raise ValueError("Wishart df must be positive")

    @property
    def p(self):
        return self.scale.shape[0]


def _bartlett(df, p, rng, size):
    a = np.zeros((size, p, p))
    idx = np.arange(p)
    a[:, idx, idx] = np.sqrt(rng.chisquare(df - idx, size=(size, p)))
    rows, cols = np.tril_indices(p, -1)
    a[:, rows, cols] = rng.standard_normal((size, rows.size))
    return a


def wishart_sample(params, rng, size=1):
    """Bartlett construction X = L A A^T L^T with L L^T = scale."""
    p = params.p
    if not params.df > p - 1:
        raise ValueError(f"Wishart sampling needs df > p - 1 (df={params.df}, p={p})")
    la = _chol(params.scale) @ _bartlett(params.df, p, rng, size)
    return la @ np.swapaxes(la, -1, -2)


def wishart_lognorm(df, scale):
    p = scale.shape[0]
    return (0.5 * df * p * math.log(2) + multigammaln(0.5 * df, p)
            + 0.5 * df * float(matcore.logdet_pd(scale)))


def wishart_logpdf(params, x):
    x = matcore.symmetrize(x)
    p = params.p
    ld = matcore.logdet_pd(x)
    inv_scale = np.linalg.inv(params.scale)
    with np.errstate(invalid="ignore"):
        out = 0.5 * (params.df - p - 1) * ld - 0.5 * _tr_prod(inv_scale, x)
    out = out - wishart_lognorm(params.df, params.scale)
    return np.where(np.isfinite(ld), out, -np.inf)


# ---------------------------------------------------------------- inverse-Wishart


def invwishart_df(nu, p):
    return nu + p - 1


def invwishart_sample(nu, psi, rng, size=1):
    """Draws of S ~ IW(nu+p-1, psi), built as inverses of Wishart(nu+p-1, psi^-1)."""
    psi = _spd(psi, "inverse-Wishart scale")
    p = psi.shape[0]
    df = invwishart_df(nu, p)
    if not nu > 0:
        raise ValueError("nu must be positive")
    low = _chol(np.linalg.inv(psi))
    la = low @ _bartlett(df, p, rng, size)
    c = np.linalg.inv(la)
    return np.swapaxes(c, -1, -2) @ c


def invwishart_logpdf(nu, psi, x):
    psi = _spd(psi, "inverse-Wishart scale")
    p = psi.shape[0]
    df = invwishart_df(nu, p)
    x = matcore.symmetrize(x)
    ld = matcore.logdet_pd(x)
    ok = np.isfinite(ld)
    xs = np.where(ok[..., None, None], x, np.eye(p))
    tr = _tr_prod(psi, np.linalg.inv(xs))
    out = -0.5 * (nu + 2 * p) * np.where(ok, ld, 0.0) - 0.5 * tr - wishart_lognorm(df, np.linalg.inv(psi))
    return np.where(ok, out, -np.inf)


# ---------------------------------------------------------------- Gaussian helpers


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal on a flat coordinate vector."""

    mean: np.ndarray
    cov: np.ndarray

    @cached_property
    def chol(self):
        return _chol(self.cov)

    @cached_property
    def _half_logdet(self):
        return float(np.sum(np.log(np.diag(self.chol))))

    @property
    def dim(self):
        return self.mean.shape[0]

    def logpdf(self, v):
        v = np.asarray(v, dtype=float)
        z = np.linalg.solve(self.chol, (v - self.mean).reshape(-1, self.dim).T).T
        out = -0.5 * np.sum(z * z, axis=1) - self._half_logdet - 0.5 * self.dim * LOG2PI
        return out.reshape(v.shape[:-1])

    def sample(self, rng, size=1):
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T


# ---------------------------------------------------------------- SMN / SSMN


@dataclass(frozen=True)
class SMNParams:
    M: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "M", matcore.check_symmetric(self.M))
        object.__setattr__(self, "psi1", _spd(self.psi1, "psi1"))
        object.__setattr__(self, "psi2", _spd(self.psi2, "psi2"))
        if not self.factor > 0:
            raise ValueError("factor must be positive")
        # validates commuting scales
        _ = self.halfvec

    @property
    def p(self):
        return self.M.shape[0]

    @cached_property
    def halfvec(self):
        cov = matcore.smn_halfvec_cov(self.psi1, self.psi2, self.factor)
        return Gaussian(matcore.vech(self.M), cov)


def smn_sample(params, rng, size=1):
    """X = M + sqrt(factor/2) A Z A^T when psi1 == psi2 == A A^T, else via vech."""
    p = params.p
    if np.array_equal(params.psi1, params.psi2):
        a = _chol(params.psi1)
        z = rng.standard_normal((size, p, p))
        z = (np.tril(z, -1) + np.swapaxes(np.tril(z, -1), -1, -2)
             + np.sqrt(2.0) * np.eye(p) * z)
        return params.M + math.sqrt(params.factor / 2) * (a @ z @ a.T)
    return matcore.vech_inverse(params.halfvec.sample(rng, size))


def smn_logpdf(params, x):
    return params.halfvec.logpdf(matcore.vech(x))


@dataclass(frozen=True)
class SSMNParams:
    graph: UGraph
    M: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    factor: float = 1.0
    mode: str = "density"

    def __post_init__(self):
        if not mcs_decomposable(self.graph)[0]:
            raise ValueError("SSMN needs a decomposable graph")
        object.__setattr__(self, "M", matcore.check_symmetric(self.M))
        object.__setattr__(self, "psi1", _spd(self.psi1, "psi1"))
        object.__setattr__(self, "psi2", _spd(self.psi2, "psi2"))
        if not self.factor > 0:
            raise ValueError("factor must be positive")
        off = ~self.graph.adjacency()
        np.fill_diagonal(off, False)
        if np.any(self.M[off] != 0):
            raise ValueError("mean matrix does not respect the graph's zero pattern")
        _ = self.halfvec

    @property
    def p(self):
        return self.M.shape[0]

    @cached_property
    def mask(self):
        return matcore.graph_mask(self.p, self.graph.edges)

    @cached_property
    def halfvec(self):
        cov = matcore.smn_halfvec_cov(self.psi1, self.psi2, self.factor, self.graph, self.mode)
        return Gaussian(matcore.vech(self.M)[self.mask], cov)


def ssmn_sample(params, rng, size=1):
    v = np.zeros((size, params.mask.size))
    v[:, params.mask] = params.halfvec.sample(rng, size)
    return matcore.vech_inverse(v)


def ssmn_logpdf(params, x, tol=1e-12):
    v = matcore.vech(np.asarray(x, dtype=float))
    off = v[..., ~params.mask]
    bad = np.any(np.abs(off) > tol, axis=-1)
    out = params.halfvec.logpdf(v[..., params.mask])
    return np.where(bad, -np.inf, out)


# ---------------------------------------------------------------- G-Wishart


@dataclass(frozen=True)
class GWishartParams:
    graph: UGraph
    beta: float
    psi3: np.ndarray

    def __post_init__(self):
        ok, _ = mcs_decomposable(self.graph)
        if not ok:
            raise ValueError("G-Wishart sampling and normalization need a decomposable graph")
        if not self.beta > 0:
            raise ValueError("G-Wishart beta must be positive")
        object.__setattr__(self, "psi3", _spd(self.psi3, "psi3"))

    @property
    def p(self):
        return self.graph.p

    @cached_property
    def tree(self) -> JunctionTree:
        return perfect_sequence(self.graph)

    @cached_property
    def lognorm(self):
        return lognorm_from_tree(self.tree, self.beta, self.psi3)


def _complete_lognorm(beta, d):
    # log of the integral of det(O)^(beta/2) exp(-tr(d O)/2) over all c x c SPD O
    c = d.shape[0]
    return wishart_lognorm(beta + c + 1, np.linalg.inv(d))


def gwishart_lognorm(params):
    """Closed-form log normalizing constant from the clique/separator factorization."""
    return params.lognorm


def lognorm_from_tree(tree, beta, d):
    total = 0.0
    for c in tree.cliques:
        idx = sorted(c)
        total += _complete_lognorm(beta, d[np.ix_(idx, idx)])
    for s in tree.separators:
        if s:
            idx = sorted(s)
            total -= _complete_lognorm(beta, d[np.ix_(idx, idx)])
    return total


def gwishart_unnorm_logpdf(beta, psi3, omega):
    ld = matcore.logdet_pd(omega)
    with np.errstate(invalid="ignore"):
        out = 0.5 * beta * ld - 0.5 * _tr_prod(psi3, omega)
    return np.where(np.isfinite(ld), out, -np.inf)


def gwishart_logpdf(params, omega, tol=1e-10):
    omega = matcore.symmetrize(omega)
    off = ~params.graph.adjacency()
    np.fill_diagonal(off, False)
    scale = np.maximum(np.max(np.abs(omega), axis=(-1, -2)), 1.0)
    bad = np.any(np.abs(omega[..., off]) > tol * scale[..., None], axis=-1)
    out = gwishart_unnorm_logpdf(params.beta, params.psi3, omega) - params.lognorm
    return np.where(bad, -np.inf, out)


def _iw_textbook(df, scale, rng, size):
    # inverse-Wishart with textbook df and scale, batched
    p = scale.shape[0]
    low = _chol(np.linalg.inv(scale))
    la = low @ _bartlett(df, p, rng, size)
    c = np.linalg.inv(la)
    return np.swapaxes(c, -1, -2) @ c


def gwishart_sample(params, rng, size=1):
    """Exact draws from W_G(beta, psi3) for decomposable G.

    The clique blocks of Sigma = Omega^-1 are generated along the perfect
    sequence (hyper inverse-Wishart construction): the first clique block is
    inverse-Wishart, and each later clique adds its residual block through
    the Schur complement given the separator. Omega is then assembled from
    clique and separator inverses, which gives exact zeros off the graph.
    """
    d = params.psi3
    beta = params.beta
    p = params.p
    sig = np.zeros((size, p, p))
    tree = params.tree
    for k, clique in enumerate(tree.cliques):
        sep = tree.separators[k - 1] if k else frozenset()
        res = sorted(clique - sep)
        m = beta + len(clique) + 1
        if not sep:
            sig[np.ix_(range(size), res, res)] = _iw_textbook(m, d[np.ix_(res, res)], rng, size)
            continue
        s = sorted(sep)
        d_ss = d[np.ix_(s, s)]
        d_sr = d[np.ix_(s, res)]
        d_ss_inv = np.linalg.inv(d_ss)
        d_rr_s = matcore.symmetrize(d[np.ix_(res, res)] - d_sr.T @ d_ss_inv @ d_sr)
        sig_rr_s = _iw_textbook(m, d_rr_s, rng, size)
        # B = Sigma_SS^-1 Sigma_SR ~ MN(D_SS^-1 D_SR, D_SS^-1, Sigma_RR.S)
        row = _chol(d_ss_inv)
        col = np.linalg.cholesky(sig_rr_s)
        z = rng.standard_normal((size, len(s), len(res)))
        b = d_ss_inv @ d_sr + row @ z @ np.swapaxes(col, -1, -2)
        sig_ss = sig[np.ix_(range(size), s, s)]
        sig_sr = sig_ss @ b
        sig_rr = sig_rr_s + np.swapaxes(b, -1, -2) @ sig_sr
        sig[np.ix_(range(size), s, res)] = sig_sr
        sig[np.ix_(range(size), res, s)] = np.swapaxes(sig_sr, -1, -2)
        sig[np.ix_(range(size), res, res)] = matcore.symmetrize(sig_rr)
    return clique_assemble(sig, tree)


def clique_assemble(sig, tree):
    """sum_C pad(inv(sig_CC)) - sum_S pad(inv(sig_SS)); works on stacks."""
    sig = np.asarray(sig, dtype=float)
    out = np.zeros_like(sig)
    for c in tree.cliques:
        idx = sorted(c)
        ix = np.ix_(idx, idx)
        out[(...,) + ix] += np.linalg.inv(sig[(...,) + ix])
    for s in tree.separators:
        if s:
            idx = sorted(s)
            ix = np.ix_(idx, idx)
            out[(...,) + ix] -= np.linalg.inv(sig[(...,) + ix])
    return matcore.symmetrize(out)
