import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from scipy.special import multigammaln

from bvmcov import dist, matcore
from bvmcov.graph import UGraph, band, complete, empty, membership_PG, random_decomposable, star
from conftest import random_spd


def within_se(draws, target, k=4.0):
    """Entrywise |mean - target| <= k * SE over the leading axis."""
    draws = np.asarray(draws)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    return np.all(np.abs(draws.mean(axis=0) - target) <= k * se + 1e-12)


def vech_cov_within_se(v, target, k=4.0):
    c = v - v.mean(axis=0)
    emp = c.T @ c / (len(v) - 1)
    se = np.sqrt(np.var(c[:, :, None] * c[:, None, :], axis=0) / len(v))
    return np.max(np.abs(emp - target) - k * se) <= 1e-12


# ---------------------------------------------------------------- data


def test_sample_cov_identity_clt():
    rng = dist.rng_stream(1, 0)
    y = dist.mvn_sample(np.eye(2), 100000, rng)
    outer = y[:, :, None] * y[:, None, :]
    assert within_se(outer, np.eye(2))


def test_sample_cov_singular_when_n_lt_p():
    s = dist.sample_cov_from(np.eye(5), 3, dist.rng_stream(2, 0))
    assert np.linalg.eigvalsh(s)[0] < 1e-10


def test_sample_cov_deterministic():
    a = dist.sample_cov_from(matcore.ar1(4, 0.3), 50, dist.rng_stream(7, 1, 2))
    b = dist.sample_cov_from(matcore.ar1(4, 0.3), 50, dist.rng_stream(7, 1, 2))
    c = dist.sample_cov_from(matcore.ar1(4, 0.3), 50, dist.rng_stream(7, 1, 3))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


# ---------------------------------------------------------------- Wishart


def test_wishart_scalar_is_gamma():
    k, theta = 5.0, 1.7
    prm = dist.WishartParams(k, np.array([[theta]]))
    grid = np.linspace(0.2, 30, 60)
    got = dist.wishart_logpdf(prm, grid[:, None, None])
    assert np.allclose(got, stats.gamma.logpdf(grid, k / 2, scale=2 * theta), rtol=0, atol=1e-10)


def test_wishart_mean():
    scale = matcore.ar1(3, 0.5)
    x = dist.wishart_sample(dist.WishartParams(10.0, scale), dist.rng_stream(3, 0), 50000)
    assert within_se(x, 10 * scale)


def test_wishart_logpdf_closed_form_at_scale():
    p = 3
    scale = matcore.ar1(p, 0.4)
    df = p + 1
    sign, ld = np.linalg.slogdet(scale)
    # log of det(X)^((df-p-1)/2) e^{-tr(scale^-1 X)/2} / (2^{df p/2} det(scale)^{df/2} Gamma_p(df/2)) at X = scale
    expect = (0.5 * (df - p - 1) * ld - 0.5 * p - 0.5 * df * p * math.log(2)
              - 0.5 * df * ld - multigammaln(df / 2, p))
    assert float(dist.wishart_logpdf(dist.WishartParams(df, scale), scale)) == pytest.approx(expect, abs=1e-12)
    assert float(dist.wishart_logpdf(dist.WishartParams(df, scale), scale)) == pytest.approx(
        stats.wishart(df=df, scale=scale).logpdf(scale), abs=1e-10)


def test_wishart_logpdf_nonpd_is_minus_inf():
    prm = dist.WishartParams(4.0, np.eye(2))
    assert dist.wishart_logpdf(prm, np.diag([1.0, -1.0])) == -np.inf


# ---------------------------------------------------------------- inverse-Wishart


def test_invwishart_scalar_is_inverse_gamma():
    nu, psi = 3.0, 2.0
    grid = np.linspace(0.05, 20, 50)
    got = dist.invwishart_logpdf(nu, np.array([[psi]]), grid[:, None, None])
    # p = 1: textbook df nu, so shape nu/2 and scale psi/2
    assert np.allclose(got, stats.invgamma.logpdf(grid, nu / 2, scale=psi / 2), atol=1e-10)


def test_invwishart_logpdf_matches_scipy_and_jacobian(rng):
    p, nu = 3, 2.5
    psi = random_spd(rng, p)
    x = random_spd(rng, p)
    df = nu + p - 1
    assert float(dist.invwishart_logpdf(nu, psi, x)) == pytest.approx(
        stats.invwishart(df=df, scale=psi).logpdf(x), abs=1e-9)
    # density of X = W^-1 is the Wishart density at W times det(X)^-(p+1)
    w = dist.wishart_logpdf(dist.WishartParams(df, np.linalg.inv(psi)), np.linalg.inv(x))
    jac = -(p + 1) * np.linalg.slogdet(x)[1]
    assert float(dist.invwishart_logpdf(nu, psi, x)) == pytest.approx(float(w) + jac, abs=1e-10)


def test_invwishart_sample_matches_independent_sampler():
    p, nu = 3, 4.0
    psi = matcore.ar1(p, 0.5)
    ours = dist.invwishart_sample(nu, psi, dist.rng_stream(4, 0), 20000)
    ref = stats.invwishart(df=nu + p - 1, scale=psi).rvs(20000, random_state=np.random.default_rng(5))
    dirs = np.random.default_rng(6).standard_normal((10, p * (p + 1) // 2))
    # Bonferroni over ten KS tests at an overall level of about 1e-4
    for u in dirs:
        pv = stats.ks_2samp(matcore.vech(ours) @ u, matcore.vech(ref) @ u).pvalue
        assert pv > 1e-5


@given(st.integers(0, 2 ** 31))
def test_invwishart_conjugation_invariance(seed):
    rng = np.random.default_rng(seed)
    psi, x = random_spd(rng, 3), random_spd(rng, 3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    a = dist.invwishart_logpdf(2.0, psi, x)
    b = dist.invwishart_logpdf(2.0, q @ psi @ q.T, q @ x @ q.T)
    assert float(a) == pytest.approx(float(b), abs=1e-8)


# ---------------------------------------------------------------- SMN / SSMN


def test_smn_scalar_density():
    s = 1.5
    prm = dist.SMNParams(np.zeros((1, 1)), np.array([[s]]), np.array([[s]]), 2.0)
    grid = np.linspace(-6, 6, 41)
    got = dist.smn_logpdf(prm, grid[:, None, None])
    assert np.allclose(got, stats.norm.logpdf(grid, scale=math.sqrt(2) * s), atol=1e-12)


@pytest.mark.parametrize("p", [2, 3])
def test_smn_sampler_covariance(p):
    psi = matcore.ar1(p, 0.5)
    prm = dist.SMNParams(np.zeros((p, p)), psi, psi, 2.0)
    v = matcore.vech(dist.smn_sample(prm, dist.rng_stream(8, p), 100000))
    assert vech_cov_within_se(v, prm.halfvec.cov)


def test_smn_logpdf_integrates_to_one_p2():
    psi = matcore.ar1(2, 0.5)
    prm = dist.SMNParams(np.zeros((2, 2)), psi, psi, 2.0)
    # tensor trapezoid rule on the raw vech coordinates, +-9 marginal sd per axis
    sd = np.sqrt(np.diag(prm.halfvec.cov))
    axes = [np.linspace(-9 * s, 9 * s, 121) for s in sd]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    dens = np.exp(dist.smn_logpdf(prm, matcore.vech_inverse(grid))).reshape(121, 121, 121)
    total = np.trapezoid(np.trapezoid(np.trapezoid(dens, axes[2]), axes[1]), axes[0])
    assert abs(total - 1) < 1e-6


def test_smn_non_commuting_rejected():
    with pytest.raises(ValueError):
        dist.SMNParams(np.zeros((2, 2)), np.array([[2, .5], [.5, 1]]), np.diag([1.0, 4.0]))


def test_ssmn_complete_matches_smn(rng):
    psi = random_spd(rng, 3)
    m = random_spd(rng, 3)
    a = dist.SSMNParams(complete(3), m, psi, psi, 2.0)
    b = dist.SMNParams(m, psi, psi, 2.0)
    x = random_spd(rng, 3)
    assert float(dist.ssmn_logpdf(a, x)) == pytest.approx(float(dist.smn_logpdf(b, x)), abs=1e-10)


def test_ssmn_empty_graph_is_independent_diagonal():
    m = np.diag([1.0, 2.0, 3.0])
    prm = dist.SSMNParams(empty(3), m, np.eye(3), np.eye(3), 2.0)
    x = np.diag([0.5, 2.5, 2.0])
    assert float(dist.ssmn_logpdf(prm, x)) == pytest.approx(
        float(np.sum(stats.norm.logpdf([0.5, 2.5, 2.0], [1, 2, 3], math.sqrt(2)))), abs=1e-12)
    x[0, 1] = x[1, 0] = 1e-6
    assert dist.ssmn_logpdf(prm, x) == -np.inf


def test_ssmn_star_sampler_covariance():
    psi = np.array([[1.5, 0.4, 0.4], [0.4, 1.0, 0.2], [0.4, 0.2, 1.0]])
    prm = dist.SSMNParams(star(3), np.zeros((3, 3)), psi, psi, 2.0)
    x = dist.ssmn_sample(prm, dist.rng_stream(9, 0), 100000)
    assert np.all(x[:, 1, 2] == 0)
    v = matcore.vech(x)[:, prm.mask]
    assert vech_cov_within_se(v, prm.halfvec.cov)


# ---------------------------------------------------------------- G-Wishart


def test_gwishart_complete_lognorm_is_wishart():
    psi = matcore.ar1(3, 0.3)
    beta = 2.5
    prm = dist.GWishartParams(complete(3), beta, psi)
    assert dist.gwishart_lognorm(prm) == pytest.approx(
        dist.wishart_lognorm(beta + 4, np.linalg.inv(psi)), abs=1e-12)


def test_gwishart_empty_lognorm_is_gamma_product():
    psi = np.diag([1.0, 2.0, 0.5])
    beta = 3.0
    prm = dist.GWishartParams(empty(3), beta, psi)
    # int w^{beta/2} e^{-d w/2} dw = Gamma(beta/2 + 1) (2/d)^{beta/2 + 1}
    k = beta / 2 + 1
    expect = sum(math.lgamma(k) + k * math.log(2 / d) for d in np.diag(psi))
    assert dist.gwishart_lognorm(prm) == pytest.approx(expect, abs=1e-12)


def test_gwishart_path3_lognorm_matches_oracle(oracle):
    o = oracle["gwishart_path3_beta3"]
    ln = dist.gwishart_lognorm(dist.GWishartParams(band(3, 1), 3.0, np.eye(3)))
    assert ln == pytest.approx(o["exact"], abs=1e-10)
    assert abs(ln - o["mc"]) <= 3 * o["mc_se_log"]


def test_gwishart_requires_decomposable_and_positive_beta():
    c4 = UGraph(4, frozenset({(0, 1), (1, 2), (2, 3), (0, 3)}))
    with pytest.raises(ValueError):
        dist.GWishartParams(c4, 3.0, np.eye(4))
    with pytest.raises(ValueError):
        dist.GWishartParams(star(3), 0.0, np.eye(3))


def test_gwishart_logpdf_off_graph_is_minus_inf():
    prm = dist.GWishartParams(star(3), 3.0, np.eye(3))
    om = np.eye(3)
    om[1, 2] = om[2, 1] = 0.1
    assert dist.gwishart_logpdf(prm, om) == -np.inf
    assert np.isfinite(dist.gwishart_logpdf(prm, np.eye(3)))


@pytest.mark.parametrize("gr", [star(5), band(5, 2), random_decomposable(6, 11)])
def test_gwishart_sampler_membership_and_moments(gr):
    beta = 7.0
    psi = matcore.ar1(gr.p, 0.3)
    prm = dist.GWishartParams(gr, beta, psi)
    om = dist.gwishart_sample(prm, dist.rng_stream(10, gr.p), 40000)
    assert all(membership_PG(o, gr, tol=1e-10) for o in om[:500])
    sig = np.linalg.inv(om)
    # every clique block of Sigma is inverse-Wishart with textbook df beta + |C| + 1, mean psi_CC / beta
    for c in prm.tree.cliques:
        idx = sorted(c)
        assert within_se(sig[:, idx][:, :, idx], psi[np.ix_(idx, idx)] / beta)


def test_gwishart_sampler_relabel_equivariance():
    beta, psi = 4.0, matcore.ar1(4, 0.4)
    perm = np.array([2, 0, 3, 1])
    gr = star(4)
    inv = np.argsort(perm)
    gr_p = UGraph(4, frozenset((int(inv[i]), int(inv[j])) for i, j in gr.edges))
    a = dist.gwishart_sample(dist.GWishartParams(gr, beta, psi), dist.rng_stream(11, 0), 30000)
    b = dist.gwishart_sample(dist.GWishartParams(gr_p, beta, psi[np.ix_(perm, perm)]),
                             dist.rng_stream(11, 1), 30000)
    a_rel = a[:, perm][:, :, perm]
    diff = a_rel.mean(0) - b.mean(0)
    se = np.sqrt(a_rel.var(0) / len(a) + b.var(0) / len(b))
    assert np.all(np.abs(diff) <= 4 * se + 1e-12)


def test_samplers_are_deterministic():
    prm = dist.GWishartParams(star(4), 3.0, np.eye(4))
    a = dist.gwishart_sample(prm, dist.rng_stream(12, 0), 5)
    b = dist.gwishart_sample(prm, dist.rng_stream(12, 0), 5)
    assert np.array_equal(a, b)
