"""Prior families, the graph prior and the flatness functional.

Log-densities are returned up to an additive constant that depends only on
the prior specification, which is all the flatness ratio and the samplers
need.  ``log_prior_sigma`` works on the covariance scale and
``log_prior_omega`` on the precision scale, linked by the Jacobian
``det(Omega)^-(p+1)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special, stats

from . import matcore
from .dist import GWishartParams, gwishart_logpdf
from .graph import UGraph, complete, is_decomposable

QUAD_RTOL = 1e-8
LOG_CLIP = 700.0
HALF_LOG2PI = 0.5 * math.log(2 * math.pi)


class QuadratureWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------- mixing laws


@dataclass(frozen=True)
class MixingFamily:
    """Density on (0, inf) used for one diagonal scale delta_i.

    tag is one of ``lognormal`` (mu, sigma), ``truncnormal`` (mu, sigma;
    a normal truncated to the positive axis), ``uniform`` (a, b) or
    ``gamma2`` (rate; shape fixed at 2).
    """

    tag: str
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(x) for x in self.params))
        n = {"lognormal": 2, "truncnormal": 2, "uniform": 2, "gamma2": 1}.get(self.tag)
        if n is None:
            raise ValueError(f"unknown mixing family {self.tag!r}")
        if len(self.params) != n:
            raise ValueError(f"{self.tag} takes {n} parameter(s)")
        if self.tag in ("lognormal", "truncnormal") and not self.params[1] > 0:
            raise ValueError("scale parameter must be positive")
        if self.tag == "uniform" and not 0 < self.params[0] < self.params[1]:
            raise ValueError("uniform mixing needs 0 < a < b")
        if self.tag == "gamma2" and not self.params[0] > 0:
            raise ValueError("gamma rate must be positive")

    @classmethod
    def lognormal(cls, mu=0.0, sigma=1.0):
        return cls("lognormal", (mu, sigma))

    @classmethod
    def truncnormal(cls, mu=0.0, sigma=1.0):
        return cls("truncnormal", (mu, sigma))

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", (a, b))

    @classmethod
    def gamma2(cls, rate=1.0):
        return cls("gamma2", (rate,))

    def logpdf(self, delta):
        delta = np.asarray(delta, dtype=float)
        pos = delta > 0
        safe = np.where(pos, delta, 1.0)
        with np.errstate(over="ignore"):
            out = self._logpdf_pos(safe)
        out = np.where(pos, out, -np.inf)
        return out if out.ndim else float(out)

    def _logpdf_pos(self, safe):
        if self.tag == "lognormal":
            mu, s = self.params
            z = (np.log(safe) - mu) / s
            out = -0.5 * z * z - math.log(s) - HALF_LOG2PI - np.log(safe)
        elif self.tag == "truncnormal":
            mu, s = self.params
            z = (safe - mu) / s
            out = -0.5 * z * z - math.log(s) - HALF_LOG2PI - float(special.log_ndtr(mu / s))
        elif self.tag == "uniform":
            a, b = self.params
            out = np.where((safe >= a) & (safe <= b), -math.log(b - a), -np.inf)
        else:
            b = self.params[0]
            out = 2 * math.log(b) + np.log(safe) - b * safe
        return out

    def support(self):
        if self.tag == "uniform":
            return self.params
        return (0.0, math.inf)

    def sample(self, rng, size=None):
        if self.tag == "lognormal":
            return rng.lognormal(self.params[0], self.params[1], size)
        if self.tag == "truncnormal":
            mu, s = self.params
            return stats.truncnorm.rvs(-mu / s, np.inf, loc=mu, scale=s, size=size, random_state=rng)
        if self.tag == "uniform":
            return rng.uniform(self.params[0], self.params[1], size)
        return rng.gamma(2.0, 1.0 / self.params[0], size)


def log_mixing_integral(mix, a, cx):
    """log of  int_0^inf delta^a exp(-cx delta / 2) pi(delta) d delta.

    Closed form for ``gamma2``; otherwise adaptive quadrature in t = log delta
    around the mode of the (log-concave) integrand.  Returns ``(value,
    abs_error_estimate_of_log)``.
    """
    if cx <= 0:
        raise ValueError("cx must be positive")
    if mix.tag == "gamma2":
        b = mix.params[0]
        return (2 * math.log(b) + special.gammaln(a + 2) - (a + 2) * math.log(b + 0.5 * cx), 0.0)

    def h(t):
        if t > LOG_CLIP:
            return -math.inf
        return a * t - 0.5 * cx * math.exp(t) + float(mix.logpdf(math.exp(t))) + t

    lo, hi = mix.support()
    tlo = math.log(lo) if lo > 0 else -math.inf
    thi = math.log(hi) if math.isfinite(hi) else math.inf
    # the integrand is log-concave in t, so a bounded search finds its mode
    res = optimize.minimize_scalar(lambda t: -h(t), bounds=(max(tlo, -60.0), min(thi, 60.0)),
                                   method="bounded", options={"xatol": 1e-10})
    tstar = float(res.x)
    hstar = h(tstar)

    def g(t):
        v = h(t) - hstar
        return math.exp(v) if v > -745 else 0.0

    pieces = [(tlo, tstar), (tstar, thi)]
    total = 0.0
    err = 0.0
    for a0, b0 in pieces:
        if a0 == b0:
            continue
        val, e = integrate.quad(g, a0, b0, epsrel=QUAD_RTOL, epsabs=0.0, limit=200)
        total += val
        err += e
    if not total > 0:
        raise FloatingPointError("mixing integral underflowed")
    rel = err / total
    if rel > 1e-6:
        warnings.warn(f"mixing quadrature relative error {rel:.2g}", QuadratureWarning)
    return hstar + math.log(total), rel


# ---------------------------------------------------------------- prior specs


@dataclass(frozen=True)
class IWPrior:
    """Sigma ~ IW(nu + p - 1, psi1)."""

    nu: float
    psi1: np.ndarray
    tag: str = field(default="IW", init=False)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        object.__setattr__(self, "psi1", _spd(self.psi1))


@dataclass(frozen=True)
class DSIWPrior:
    """Sigma | Delta ~ IW(nu + p - 1, c_nu Delta), delta_i ~ mixing[i]."""

    nu: float
    p: int
    mixing: tuple
    c_nu: Optional[float] = None
    tag: str = field(default="DSIW", init=False)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        mix = self.mixing
        if isinstance(mix, MixingFamily):
            mix = (mix,) * self.p
        mix = tuple(mix)
        if len(mix) != self.p:
            raise ValueError("need one mixing law per coordinate")
        object.__setattr__(self, "mixing", mix)
        if self.c_nu is None:
            c = 2.0 * self.nu if all(m.tag == "gamma2" for m in mix) else 1.0
            object.__setattr__(self, "c_nu", c)
        if not self.c_nu > 0:
            raise ValueError("c_nu must be positive")

    @property
    def mix_exponent(self):
        return 0.5 * (self.nu + self.p - 1)


@dataclass(frozen=True)
class MatrixFPrior:
    """Sigma | D ~ IW(nu + p - 1, D), D ~ W(nu_star, psi2)."""

    nu: float
    nu_star: float
    psi2: np.ndarray
    tag: str = field(default="MatrixF", init=False)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        object.__setattr__(self, "psi2", _spd(self.psi2))
        if not self.nu_star > self.psi2.shape[0] - 1:
            raise ValueError("nu_star must exceed p - 1")


@dataclass(frozen=True)
class GWishartPrior:
    """Omega ~ W_G(beta, psi3) on P_G."""

    graph: UGraph
    beta: float
    psi3: np.ndarray
    tag: str = field(default="GWishart", init=False)

    def __post_init__(self):
        object.__setattr__(self, "psi3", _spd(self.psi3))
        _ = self.params

    @cached_property
    def params(self):
        return GWishartParams(self.graph, self.beta, self.psi3)


@dataclass(frozen=True)
class GraphPrior:
    """pi(G) proportional to C(m, |E|)^-1 exp(-|E| tau log p) on decomposable G, |E| <= R."""

    p: int
    tau: float = 1.0
    R: Optional[int] = None

    def __post_init__(self):
        m = self.p * (self.p - 1) // 2
        if self.R is None:
            object.__setattr__(self, "R", m)
        if not 0 <= self.R <= m:
            raise ValueError("R must lie in [0, p(p-1)/2]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class HierGWishartPrior:
    """(G, Omega): G ~ GraphPrior, Omega | G ~ W_G(beta, psi3)."""

    beta: float
    psi3: np.ndarray
    graph_prior: GraphPrior
    tag: str = field(default="HierGWishart", init=False)

    def __post_init__(self):
        object.__setattr__(self, "psi3", _spd(self.psi3))
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class FlatPrior:
    """Improper constant density; flatness functional is identically zero."""

    tag: str = field(default="Flat", init=False)


def _spd(a):
    a = matcore.check_symmetric(a)
    if not matcore.is_positive_definite(a):
        raise ValueError("scale matrix is not positive definite")
    return a


# ---------------------------------------------------------------- log densities


def _pd_or_none(a):
    a = matcore.check_symmetric(a)
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    return low


def log_prior_sigma(spec, sigma):
    """Log prior density of Sigma, up to a spec-only constant; -inf if not PD."""
    sigma = np.asarray(sigma, dtype=float)
    if spec.tag == "Flat":
        return 0.0
    if spec.tag in ("GWishart", "HierGWishart"):
        raise ValueError(f"{spec.tag} is specified on the precision scale; use log_prior_omega")
    low = _pd_or_none(sigma)
    if low is None:
        return -math.inf
    p = sigma.shape[0]
    logdet = 2.0 * float(np.sum(np.log(np.diag(low))))
    inv = np.linalg.inv(sigma)
    if spec.tag == "IW":
        _check_dim(spec.psi1, p)
        return -0.5 * (spec.nu + 2 * p) * logdet - 0.5 * float(np.sum(spec.psi1 * inv))
    if spec.tag == "DSIW":
        if spec.p != p:
            raise ValueError("dimension mismatch")
        out = -0.5 * (spec.nu + 2 * p) * logdet
        for i in range(p):
            out += log_mixing_integral(spec.mixing[i], spec.mix_exponent, spec.c_nu * inv[i, i])[0]
        return out
    if spec.tag == "MatrixF":
        _check_dim(spec.psi2, p)
        k = spec.nu_star + spec.nu + p - 1
        return (-0.5 * (spec.nu + 2 * p) * logdet
                - 0.5 * k * float(matcore.logdet_pd(inv + np.linalg.inv(spec.psi2))))
    raise ValueError(f"unknown prior tag {spec.tag!r}")


def log_prior_omega(spec, omega, graph=None):
    """Log prior density of Omega, up to a spec-only constant; -inf if not PD.

    For the unstructured families this is
    ``log_prior_sigma(spec, inv(omega)) - (p + 1) log det(omega)``.
    The G-Wishart value is fully normalized; the hierarchical prior needs
    ``graph`` and adds the log graph prior.
    """
    omega = np.asarray(omega, dtype=float)
    if spec.tag == "Flat":
        return 0.0
    if spec.tag == "GWishart":
        return float(gwishart_logpdf(spec.params, omega))
    if spec.tag == "HierGWishart":
        if graph is None:
            raise ValueError("hierarchical prior needs a graph")
        gp = spec.graph_prior
        lg = log_graph_prior(graph, gp.tau, gp.R)
        if lg == -math.inf:
            return -math.inf
        return lg + float(gwishart_logpdf(GWishartParams(graph, spec.beta, spec.psi3), omega))
    low = _pd_or_none(omega)
    if low is None:
        return -math.inf
    p = omega.shape[0]
    logdet = 2.0 * float(np.sum(np.log(np.diag(low))))
    if spec.tag == "IW":
        _check_dim(spec.psi1, p)
        return 0.5 * (spec.nu - 2) * logdet - 0.5 * float(np.sum(spec.psi1 * omega))
    if spec.tag == "MatrixF":
        _check_dim(spec.psi2, p)
        k = spec.nu_star + spec.nu + p - 1
        return (0.5 * (spec.nu - 2) * logdet
                - 0.5 * k * float(matcore.logdet_pd(omega + np.linalg.inv(spec.psi2))))
    if spec.tag == "DSIW":
        out = 0.5 * (spec.nu - 2) * logdet
        for i in range(p):
            out += log_mixing_integral(spec.mixing[i], spec.mix_exponent, spec.c_nu * omega[i, i])[0]
        return out
    raise ValueError(f"unknown prior tag {spec.tag!r}")


def _check_dim(a, p):
    if a.shape != (p, p):
        raise ValueError(f"scale matrix has shape {a.shape}, expected {(p, p)}")


def log_graph_prior(graph, tau, R=None):
    """-log C(p(p-1)/2, |E|) - |E| tau log p on decomposable graphs with |E| <= R."""
    p = graph.p
    m = p * (p - 1) // 2
    if R is None:
        R = m
    e = graph.n_edges
    if e > R or not is_decomposable(graph):
        return -math.inf
    log_binom = special.gammaln(m + 1) - special.gammaln(e + 1) - special.gammaln(m - e + 1)
    return float(-log_binom - e * tau * math.log(p)) if p > 1 else 0.0


# ---------------------------------------------------------------- flatness


@dataclass(frozen=True)
class FlatnessResult:
    value: float
    n_candidates: int
    n_feasible: int
    best_delta: np.ndarray
    log_ratio: float

    @property
    def is_lower_bound(self):
        return True


def _gradient(fun, x0, h):
    g = np.zeros_like(x0)
    for k in range(x0.size):
        e = np.zeros_like(x0)
        e[k] = h
        fp, fm = fun(x0 + e), fun(x0 - e)
        if math.isfinite(fp) and math.isfinite(fm):
            g[k] = (fp - fm) / (2 * h)
    return g


def flatness_rho(spec, center, eps, n, budget=200, rng=None, scale="sigma", graph=None,
                 radii=24, polish_rounds=30):
    """Randomized lower bound of sup |pi(center + T/sqrt(n)) / pi(center) - 1|.

    The supremum runs over symmetric T with ||T||_2 <= sqrt(n) eps, i.e.
    perturbations D = T / sqrt(n) with ||D||_2 <= eps, keeping center + D
    positive definite.  With ``graph`` the perturbation is restricted to
    M_G (free coordinates only).

    Search: ``budget`` random directions plus the two signed directions
    built from the log-density gradient, each scanned along a geometric
    grid of radii in (0, eps], then coordinate-ascent polish of the best
    point.  The value returned is attained by a feasible perturbation and
    is therefore a lower bound of the supremum.
    """
    center = matcore.check_symmetric(center)
    p = center.shape[0]
    if not eps > 0:
        raise ValueError("eps must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    if graph is None:
        graph = spec.graph if spec.tag == "GWishart" else complete(p)
    mask = matcore.graph_mask(p, graph.edges)
    base = matcore.vech(center)
    dim = int(mask.sum())
    if spec.tag == "GWishart" and scale == "sigma":
        raise ValueError("G-Wishart flatness is evaluated on the precision scale")

    if scale == "sigma":
        def logpi(mat):
            return log_prior_sigma(spec, mat)
    elif scale == "omega":
        def logpi(mat):
            return log_prior_omega(spec, mat)
    else:
        raise ValueError("scale must be 'sigma' or 'omega'")

    l0 = logpi(center)
    if not math.isfinite(l0):
        raise ValueError("prior density at the center is zero or undefined")

    def to_mat(w):
        v = np.zeros_like(base)
        v[mask] = w
        return matcore.vech_inverse(v)

    def objective(w):
        # (value, log ratio); -1 flags infeasible
        d = to_mat(w)
        if matcore.spectral_norm(d) > eps * (1 + 1e-12):
            return -1.0, math.nan
        m = center + d
        if not matcore.is_positive_definite(m):
            return -1.0, math.nan
        lr = logpi(m) - l0
        if not math.isfinite(lr):
            return -1.0, math.nan
        lr = float(np.clip(lr, -LOG_CLIP, LOG_CLIP))
        return abs(math.expm1(lr)), lr

    # candidate unit directions (spectral norm 1)
    dirs = []
    h = 1e-6 * max(1.0, float(np.max(np.abs(center))))
    grad = _gradient(lambda w: logpi(center + to_mat(w)), np.zeros(dim), h)
    if np.any(grad != 0):
        gm = to_mat(grad)
        w_, u_ = np.linalg.eigh(gm)
        sign_dir = matcore.vech(u_ @ np.diag(np.sign(w_)) @ u_.T)[mask]
        for d0 in (grad, sign_dir):
            for s in (1.0, -1.0):
                dirs.append(s * d0)
    z = rng.standard_normal((budget, dim))
    dirs.extend(z)
    units = []
    for d0 in dirs:
        nrm = matcore.spectral_norm(to_mat(d0))
        if nrm > 0:
            units.append(d0 / nrm)
    fracs = 2.0 ** (-np.arange(radii) / 4.0)

    best_val, best_lr, best_w = -1.0, math.nan, None
    n_feasible = 0
    n_cand = 0
    for u in units:
        for f in fracs:
            n_cand += 1
            w = eps * f * u
            val, lr = objective(w)
            if val >= 0:
                n_feasible += 1
                if val > best_val:
                    best_val, best_lr, best_w = val, lr, w
    if best_w is None:
        raise ValueError("no feasible perturbation: center is too close to the PD boundary for this eps")

    # coordinate ascent polish
    step = eps / 4
    for _ in range(polish_rounds):
        improved = False
        for k in range(dim):
            for s in (step, -step):
                w = best_w.copy()
                w[k] += s
                n_cand += 1
                val, lr = objective(w)
                if val >= 0:
                    n_feasible += 1
                    if val > best_val:
                        best_val, best_lr, best_w = val, lr, w
                        improved = True
        if not improved:
            step /= 2
            if step < eps * 1e-4:
                break
    return FlatnessResult(best_val, n_cand, n_feasible, to_mat(best_w), best_lr)
