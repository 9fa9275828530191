import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from bvmcov import dist, div, matcore, post


def norm_pair(n=100000, shift=1.0, seed=0):
    x = np.random.default_rng(seed).standard_normal(n)
    return stats.norm.logpdf(x), stats.norm.logpdf(x, shift), x


def test_tv_identical_is_zero():
    lf, _, _ = norm_pair(1000)
    est = div.tv_exact_mc(lf, lf)
    assert est.value == 0.0 and est.mc_stderr == 0.0


def test_tv_gaussian_shift(oracle):
    lf, lg, _ = norm_pair()
    est = div.tv_exact_mc(lf, lg)
    assert abs(est.value - oracle["gaussian_pair"]["tv"]) <= 3 * est.mc_stderr
    assert oracle["gaussian_pair"]["tv"] == pytest.approx(oracle["gaussian_pair"]["tv_quad"], abs=1e-8)


def test_tv_rejects_many_nonfinite():
    lf, lg, _ = norm_pair(1000)
    lf[:5] = np.nan
    with pytest.raises(div.DivergenceError):
        div.tv_exact_mc(lf, lg)
    lf[:5] = 0.0
    lf[0] = np.nan
    assert div.tv_exact_mc(lf, lg).extras["dropped"] == 1


def test_tv_weight_adds_singular_mass():
    lf, _, _ = norm_pair(1000)
    assert div.tv_exact_mc(lf, lf, weight=0.7).value == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(ValueError):
        div.tv_exact_mc(lf, lf, weight=0.0)


def _iw_vs_smn(seed, n=2000, draws=20000):
    p = 2
    S = dist.sample_cov_from(matcore.ar1(p, 0.5), n, dist.rng_stream(seed, 0))
    res = post.iw_posterior(3.0, np.eye(p), n, S)
    x = res.sample(dist.rng_stream(seed, 1), draws).draws
    lim = dist.SMNParams(np.zeros((p, p)), S, S, 2.0)
    t = math.sqrt(n) * (x - S)
    # log-density of T = sqrt(n)(Sigma - S): subtract the Jacobian (d/2) log n, d = 3
    lf = res.logpdf(x) - 1.5 * math.log(n)
    lg = dist.smn_logpdf(lim, t)
    return lf, lg


def test_tv_iw_vs_smn_reproducible_across_seeds():
    e1 = div.tv_exact_mc(*_iw_vs_smn(1))
    e2 = div.tv_exact_mc(*_iw_vs_smn(1))
    assert e1 == e2
    lf, lg = _iw_vs_smn(1)
    # same data, fresh draws
    p, n = 2, 2000
    S = dist.sample_cov_from(matcore.ar1(p, 0.5), n, dist.rng_stream(1, 0))
    res = post.iw_posterior(3.0, np.eye(p), n, S)
    x = res.sample(dist.rng_stream(99, 1), 20000).draws
    lim = dist.SMNParams(np.zeros((p, p)), S, S, 2.0)
    e3 = div.tv_exact_mc(res.logpdf(x) - 1.5 * math.log(n), dist.smn_logpdf(lim, math.sqrt(n) * (x - S)))
    assert 0 <= e1.value <= 1
    assert abs(e1.value - e3.value) <= 3 * math.hypot(e1.mc_stderr, e3.mc_stderr)


@given(st.floats(0.2, 5.0), st.floats(-3, 3))
def test_tv_affine_invariance(a, b):
    # TV between N(0,1) and N(1,1) computed after x -> a x + b; log-Jacobians cancel in the ratio
    x = np.random.default_rng(3).standard_normal(2000)
    y = a * x + b
    lf = stats.norm.logpdf(y, b, a)
    lg = stats.norm.logpdf(y, a + b, a)
    ref = div.tv_exact_mc(stats.norm.logpdf(x), stats.norm.logpdf(x, 1.0))
    assert div.tv_exact_mc(lf, lg).value == pytest.approx(ref.value, abs=1e-10)


def test_hellinger_and_renyi_gaussian(oracle):
    lf, lg, _ = norm_pair()
    h = div.hellinger_mc(lf, lg)
    assert abs(h.value - oracle["gaussian_pair"]["h2"]) <= 3 * h.mc_stderr
    assert math.exp(-1 / 8) == pytest.approx(oracle["gaussian_pair"]["bc_quad"], abs=1e-9)
    r = div.renyi_mc(lf, lg, alpha=0.5)
    assert abs(r.value - 0.25) <= 3 * r.mc_stderr


def test_identical_densities_give_zero_divergences():
    lf, _, _ = norm_pair(500)
    assert div.d_alpha_mc(lf, lf, alpha=0.3).value == 0.0
    assert div.renyi_mc(lf, lf, alpha=0.3).value == 0.0
    assert div.hellinger_mc(lf, lf).value == 0.0


@given(st.floats(0.05, 0.95))
def test_renyi_d_alpha_identity(alpha):
    lf, lg, _ = norm_pair(3000, shift=0.7, seed=4)
    d = div.d_alpha_mc(lf, lg, alpha=alpha).value
    r = div.renyi_mc(lf, lg, alpha=alpha).value
    assert r == pytest.approx(div.renyi_from_d_alpha(d, alpha), rel=1e-10, abs=1e-12)


def test_d_alpha_continuous_in_alpha():
    lf, lg, _ = norm_pair(100000)
    ests = [div.d_alpha_mc(lf, lg, alpha=a) for a in np.arange(0.1, 0.95, 0.1)]
    for e0, e1 in zip(ests, ests[1:]):
        assert abs(e1.value - e0.value) <= 5 * max(e0.mc_stderr, e1.mc_stderr) + 0.05


def test_heavy_tail_flag():
    # g much narrower than f: g/f is huge on a few samples near 0
    x = np.random.default_rng(5).standard_normal(200)
    lf = stats.norm.logpdf(x)
    lg = stats.norm.logpdf(x, scale=0.01)
    assert "heavy_tail" in div.renyi_mc(lf, lg, alpha=0.1).flags
    assert "heavy_tail" not in div.hellinger_mc(lf, stats.norm.logpdf(x, 2.0)).flags
    with pytest.raises(ValueError):
        div.d_alpha_mc(lf, lg, alpha=1.0)


def test_audit_identical_and_gaussian():
    lf, lg, _ = norm_pair()
    rep = div.inequality_audit(lf, lf)
    assert rep.passed and all(abs(c.margin) < 1e-12 for c in rep.checks)
    rep = div.inequality_audit(lf, lg)
    assert rep.passed
    tv, h2 = 2 * stats.norm.cdf(0.5) - 1, 2 * (1 - math.exp(-1 / 8))
    assert tv ** 2 == pytest.approx(0.1466, abs=1e-4) and h2 * (1 - h2 / 4) == pytest.approx(0.2212, abs=1e-4)


def test_audit_iw_vs_smn_every_seed():
    for seed in range(5):
        assert div.inequality_audit(*_iw_vs_smn(seed, n=300, draws=5000)).passed


def _gauss(dim=3, seed=6):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    return np.zeros(dim), a @ a.T + np.eye(dim)


def test_sliced_null_calibration():
    mean, cov = _gauss()
    x = np.random.default_rng(7).multivariate_normal(mean, cov, 10000)
    est = div.sliced_tv(x, (mean, cov), directions=100, rng=np.random.default_rng(8))
    assert est.lower_bound and est.value <= 0.05


def test_sliced_detects_shift():
    mean, cov = _gauss()
    x = np.random.default_rng(9).multivariate_normal(mean, cov, 10000)
    x[:, 0] += 2 * math.sqrt(cov[0, 0])
    assert div.sliced_tv(x, (mean, cov), rng=np.random.default_rng(10)).value >= 0.5


def test_sliced_scaling_invariance():
    mean, cov = _gauss()
    x = np.random.default_rng(11).multivariate_normal(mean, cov, 3000) * 1.1
    a = np.diag([0.5, 3.0, 20.0])
    e1 = div.sliced_tv(x, (mean, cov), directions=20, rng=np.random.default_rng(13))
    e2 = div.sliced_tv(x @ a.T, (a @ mean, a @ cov @ a.T), directions=20, rng=np.random.default_rng(13))
    assert e1.value == pytest.approx(e2.value, abs=1e-9)


def test_sliced_needs_enough_samples():
    mean, cov = _gauss()
    with pytest.raises(div.DivergenceError):
        div.sliced_tv(np.zeros((10, 3)), (mean, cov))


def test_sliced_below_exact():
    p, n = 2, 500
    S = dist.sample_cov_from(matcore.ar1(p, 0.5), n, dist.rng_stream(14, 0))
    res = post.iw_posterior(3.0, np.eye(p), n, S)
    x = res.sample(dist.rng_stream(14, 1), 10000).draws
    lim = dist.SMNParams(np.zeros((p, p)), S, S, 2.0)
    t = math.sqrt(n) * (x - S)
    ex = div.tv_exact_mc(res.logpdf(x) - 1.5 * math.log(n), dist.smn_logpdf(lim, t))
    sl = div.sliced_tv(matcore.vech(t), lim, directions=50, rng=np.random.default_rng(15))
    assert sl.value <= ex.value + 3 * math.hypot(ex.mc_stderr, sl.mc_stderr)
