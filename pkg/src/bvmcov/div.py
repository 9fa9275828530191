"""Divergence estimators between a sampled density f and a reference g.

The Monte Carlo estimators only need samples from f and the two log
densities evaluated at those samples; they work on the log ratio
``lr = log g - log f``:

* TV             = E_f[(1 - exp(lr))_+]
* int f^a g^(1-a) = E_f[exp((1 - a) lr)]
* D_a = (1 - int f^a g^(1-a)) / (a (1 - a)),  R_a = log(int f^a g^(1-a)) / (a - 1)
* H^2 = 2 (1 - int sqrt(f g)),  so D_1/2 = 2 H^2.

``sliced_tv`` needs only samples of f and a Gaussian g and returns a lower
bound of TV through one-dimensional projections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

BAD_FRACTION = 1e-3
HEAVY_TAIL_RSE = 0.25
EXP_CLIP = 700.0


class DivergenceError(ValueError):
    pass


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    mc_stderr: float
    method: str
    n_samples: int
    lower_bound: bool = False
    flags: tuple = ()
    extras: dict = field(default_factory=dict)


def log_ratio(logf, logg, samples=None):
    """Evaluate lr = log g - log f at samples; callables or precomputed arrays.

    A sample with log g = -inf is valid (g vanishes there).  Samples with
    undefined values are dropped if they are at most 0.1% of the total.
    """
    lf = np.asarray(logf(samples) if callable(logf) else logf, dtype=float)
    lg = np.asarray(logg(samples) if callable(logg) else logg, dtype=float)
    if lf.shape != lg.shape:
        raise DivergenceError("log-density arrays differ in shape")
    bad = ~np.isfinite(lf) | np.isnan(lg) | (lg == np.inf)
    frac = float(bad.mean()) if bad.size else 0.0
    if frac > BAD_FRACTION:
        raise DivergenceError(f"non-finite log ratio on {100 * frac:.3g}% of samples "
                              f"(log f non-finite: {int(np.sum(~np.isfinite(lf)))})")
    with np.errstate(invalid="ignore"):
        lr = lg[~bad] - lf[~bad]
    return lr, int(bad.sum())


def _mean_se(x):
    n = x.size
    if n < 2:
        raise DivergenceError("need at least two samples")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))


def tv_terms(lr, weight=1.0):
    """Per-sample TV terms; ``weight`` < 1 handles f = weight * p + (mass singular to g)."""
    if weight == 1.0:
        return -np.expm1(np.minimum(lr, 0.0))
    return (1.0 - weight) + np.maximum(weight - np.exp(np.minimum(lr, EXP_CLIP)), 0.0)


def tv_exact_mc(logf, logg, samples=None, weight=1.0):
    """Unbiased one-sided TV estimate from samples of f.

    With ``weight`` = w < 1 the target is a mixture w p + (1 - w) r where r
    is singular to g and the samples come from p; lr is then log g - log p.
    """
    _check_weight(weight)
    lr, dropped = log_ratio(logf, logg, samples)
    v, se = _mean_se(tv_terms(lr, weight))
    flags = ("dropped_samples",) if dropped else ()
    return DivergenceEstimate(min(max(v, 0.0), 1.0), se, "exact-mc", lr.size, False, flags,
                              {"dropped": dropped})


def _check_weight(w):
    if not 0 < w <= 1:
        raise ValueError("mixture weight must lie in (0, 1]")


def _affinity_terms(lr, alpha, weight=1.0):
    z = (1 - alpha) * lr
    clipped = bool(np.any(z > EXP_CLIP))
    return weight ** alpha * np.exp(np.minimum(z, EXP_CLIP)), clipped


def affinity_mc(logf, logg, samples=None, alpha=0.5, weight=1.0):
    """E_f[(g/f)^(1-alpha)]: estimate of int f^alpha g^(1-alpha)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    _check_weight(weight)
    lr, dropped = log_ratio(logf, logg, samples)
    terms, clipped = _affinity_terms(lr, alpha, weight)
    v, se = _mean_se(terms)
    return v, se, lr.size, clipped, dropped


def _flags(v, se, clipped, dropped):
    out = []
    if v != 0 and se / abs(v) > HEAVY_TAIL_RSE:
        out.append("heavy_tail")
    if clipped:
        out.append("clipped")
    if dropped:
        out.append("dropped_samples")
    return tuple(out)


def d_alpha_mc(logf, logg, samples=None, alpha=0.5, weight=1.0):
    i, se, n, clipped, dropped = affinity_mc(logf, logg, samples, alpha, weight)
    k = alpha * (1 - alpha)
    v = (1 - i) / k
    ve = se / k
    return DivergenceEstimate(v, ve, "exact-mc", n, False, _flags(v, ve, clipped, dropped),
                              {"alpha": alpha, "affinity": i, "affinity_se": se})


def renyi_mc(logf, logg, samples=None, alpha=0.5, weight=1.0):
    i, se, n, clipped, dropped = affinity_mc(logf, logg, samples, alpha, weight)
    if not i > 0:
        raise DivergenceError("affinity estimate is not positive")
    v = math.log(i) / (alpha - 1)
    ve = se / (i * (1 - alpha))
    return DivergenceEstimate(v, ve, "exact-mc", n, False, _flags(v, ve, clipped, dropped),
                              {"alpha": alpha, "affinity": i, "affinity_se": se})


def hellinger_mc(logf, logg, samples=None, weight=1.0):
    """Squared Hellinger distance H^2 = 2 (1 - BC)."""
    bc, se, n, clipped, dropped = affinity_mc(logf, logg, samples, 0.5, weight)
    v = 2 * (1 - bc)
    ve = 2 * se
    return DivergenceEstimate(v, ve, "exact-mc", n, False, _flags(v, ve, clipped, dropped),
                              {"bhattacharyya": bc, "H": math.sqrt(max(v, 0.0))})


def renyi_from_d_alpha(d, alpha):
    return math.log(1 - alpha * (1 - alpha) * d) / (alpha - 1)


# ---------------------------------------------------------------- audit


@dataclass(frozen=True)
class AuditCheck:
    name: str
    lhs: float
    rhs: float
    se: float
    passed: bool

    @property
    def margin(self):
        return self.rhs - self.lhs


@dataclass(frozen=True)
class AuditReport:
    checks: tuple
    values: dict

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


AUDIT_ATOL = 1e-12


def _combined_se(grad, terms):
    # delta-method SE of a smooth function of sample means of the columns of terms
    cov = np.atleast_2d(np.cov(terms, rowvar=False)) / terms.shape[0]
    return float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def inequality_audit(logf, logg, samples=None, alphas=(0.25, 0.5, 0.75), k=3.0, weight=1.0,
                     atol=AUDIT_ATOL):
    """Check alpha(1-alpha) D_alpha <= TV, H^2 <= 2 TV and TV^2 <= H^2 (1 - H^2/4).

    Every quantity is estimated from the same set of samples, and each
    inequality is allowed a slack of k combined standard errors plus
    ``atol`` for rounding (both sides reach 1 when f and g nearly separate).
    """
    _check_weight(weight)
    lr, _ = log_ratio(logf, logg, samples)
    tv = tv_terms(lr, weight)
    bc = _affinity_terms(lr, 0.5, weight)[0]
    h2 = 2 * (1 - bc)
    t, h = tv.mean(), h2.mean()
    checks = []
    values = {"tv": float(t), "h2": float(h)}
    for a in alphas:
        q = 1 - _affinity_terms(lr, a, weight)[0]   # alpha(1-alpha) D_alpha per sample
        lhs = float(q.mean())
        se = _combined_se(np.array([1.0, -1.0]), np.column_stack([q, tv]))
        checks.append(AuditCheck(f"a(1-a)D_a<=TV[a={a:g}]", lhs, float(t), se, lhs <= t + k * se + atol))
        values[f"d_alpha[{a:g}]"] = lhs / (a * (1 - a))
    se = _combined_se(np.array([1.0, -2.0]), np.column_stack([h2, tv]))
    checks.append(AuditCheck("H2<=2TV", float(h), float(2 * t), se, h <= 2 * t + k * se + atol))
    rhs = h * (1 - h / 4)
    grad = np.array([2 * t, -(1 - h / 2)])
    se = _combined_se(grad, np.column_stack([tv, h2]))
    checks.append(AuditCheck("TV^2<=H2(1-H2/4)", float(t * t), float(rhs), se, t * t <= rhs + k * se + atol))
    return AuditReport(tuple(checks), values)


# ---------------------------------------------------------------- sliced TV


def _kde_on_grid(x, grid):
    """Linear-binned Gaussian KDE (Silverman bandwidth) evaluated on a uniform grid."""
    n = x.size
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    h = 0.9 * spread * n ** (-0.2)
    dx = grid[1] - grid[0]
    m = grid.size
    pos = (x - grid[0]) / dx
    inside = (pos >= 0) & (pos <= m - 1)
    pos = pos[inside]
    lo = np.minimum(np.floor(pos).astype(int), m - 2)
    w = pos - lo
    counts = np.bincount(lo, 1 - w, minlength=m) + np.bincount(lo + 1, w, minlength=m)
    half = min(m - 1, int(math.ceil(8 * h / dx)))
    offs = np.arange(-half, half + 1) * dx
    ker = np.exp(-0.5 * (offs / h) ** 2) / (h * math.sqrt(2 * math.pi))
    dens = np.convolve(counts, ker, mode="same") / n
    return dens, 1.0 - inside.mean(), h


def _tv_1d(x, mean, sd, grid_points=512, span=6.0):
    grid = np.linspace(mean - span * sd, mean + span * sd, grid_points)
    dens, out_f, _ = _kde_on_grid(x, grid)
    phi = np.exp(-0.5 * ((grid - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    out_g = 2 * special.ndtr(-span)
    inner = np.trapezoid(np.abs(dens - phi), grid)
    return 0.5 * (inner + abs(out_f - out_g))


def _gaussian_of(g):
    if hasattr(g, "halfvec"):
        return g.halfvec.mean, g.halfvec.cov
    mean, cov = g
    return np.asarray(mean, float), np.asarray(cov, float)


def sliced_tv(samples, g, directions=100, rng=None, bootstrap=50, min_samples=1000):
    """Lower bound of TV(f, g) by the largest one-dimensional projected TV.

    ``samples`` are draws of f in the same flat coordinates as g (vech or
    vech*), g is an SMN/SSMN parameter object or a ``(mean, cov)`` pair.
    Directions are unit vectors in the coordinates that whiten g: the mean
    difference, the extreme eigenvectors of the whitened sample covariance,
    then random directions up to ``directions`` in total.
    """
    x = np.asarray(samples, float)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array (N, dim)")
    if x.shape[0] < min_samples:
        raise DivergenceError(f"sliced TV needs at least {min_samples} samples, got {x.shape[0]}")
    if rng is None:
        rng = np.random.default_rng(0)
    mean, cov = _gaussian_of(g)
    low = np.linalg.cholesky(cov)
    z = np.linalg.solve(low, (x - mean).T).T
    dim = z.shape[1]
    cands = []
    mdiff = z.mean(axis=0)
    if np.linalg.norm(mdiff) > 0:
        cands.append(mdiff / np.linalg.norm(mdiff))
    w, v = np.linalg.eigh(np.atleast_2d(np.cov(z, rowvar=False)))
    cands.append(v[:, -1])
    cands.append(v[:, 0])
    while len(cands) < directions:
        u = rng.standard_normal(dim)
        cands.append(u / np.linalg.norm(u))
    cands = cands[:max(directions, 1)]
    best, best_u = -1.0, None
    for u in cands:
        val = _tv_1d(z @ u, 0.0, 1.0)
        if val > best:
            best, best_u = val, u
    proj = z @ best_u
    boots = [_tv_1d(proj[rng.integers(0, proj.size, proj.size)], 0.0, 1.0) for _ in range(bootstrap)]
    se = float(np.std(boots, ddof=1)) if bootstrap > 1 else 0.0
    return DivergenceEstimate(float(min(best, 1.0)), se, "sliced", x.shape[0], True, (),
                              {"directions": len(cands), "best_direction": best_u.tolist()})
