"""Per-replicate workers, grid execution and acceptance checks for every command."""

from __future__ import annotations

import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .. import matcore
from ..dist import (Gaussian, WishartParams, rng_stream, sample_cov_from, wishart_logpdf,
                    wishart_sample)
from ..div import (DivergenceError, d_alpha_mc, hellinger_mc, inequality_audit, renyi_mc,
                   sliced_tv, tv_exact_mc)
from ..graph import is_decomposable
from ..post import (dsiw_gibbs, exact_graph_posterior, graph_estimate,
                    gwishart_posterior, iw_posterior, matrixf_gibbs, mle_graph)
from ..prior import flatness_rho, log_graph_prior
from .config import ConfigError, float_list, parse_functional, str_list
from .scenarios import (assumption_columns, build_prior, check_prior_kind, make_truth, rate_info,
                        scenario_graph)

ABORT_FRACTION = 0.10
EXACT_GRAPH_P = 5
BINOMIAL_PREFIXES = ("covered", "modal_hit", "audit_pass", "ghat_is_truth", "pair:audit_pass")


def stream_seed(master, gi, ri):
    """First 32-bit word of the replicate's seed sequence (for the results table)."""
    return int(np.random.SeedSequence(int(master), spawn_key=(int(gi), int(ri))).generate_state(1)[0])


# ---------------------------------------------------------------- posteriors


@dataclass
class Posterior:
    """Posterior draws plus an optional density on the scale of the draws."""

    draws: np.ndarray
    scale: str
    logpdf: object = None
    graph: object = None
    weight: float = 1.0
    extras: dict = field(default_factory=dict)


def _omega_params(nu, psi, n, S):
    # Sigma ~ IW(textbook df nu + n + p - 1, psi + nS)  <=>  Omega ~ W(same df, inv(psi + nS))
    post = iw_posterior(nu, psi, n, S)
    p = post.psi.shape[0]
    return WishartParams(post.nu + p - 1, matcore.symmetrize(np.linalg.inv(post.psi)))


def _sample_gibbs(cfg, spec, n, S, rng):
    iters = max(cfg.gibbs_iters, 10)
    if spec.tag == "DSIW":
        d = dsiw_gibbs(spec, n, S, iters, rng)
    else:
        d = matrixf_gibbs(spec.nu, spec.nu_star, spec.psi2, n, S, iters, rng)
    return d


def draw_posterior(cfg, truth, n, S, rng, size=None, ghat_mode=None):
    """Posterior draws for the scenario kind, on the scale where the limit is stated."""
    size = cfg.draws if size is None else size
    p = truth.p
    pc = cfg.prior
    kind = cfg.kind
    if kind.startswith("unstructured"):
        spec = build_prior(pc, p, n)
        if spec.tag == "IW" and kind == "unstructured-sigma":
            post = iw_posterior(spec.nu, spec.psi1, n, S)
            d = post.sample(rng, size).draws
            return Posterior(d, "sigma", post.logpdf)
        if spec.tag == "IW":
            params = _omega_params(spec.nu, spec.psi1, n, S)
            d = wishart_sample(params, rng, size)
            return Posterior(d, "omega", lambda x: wishart_logpdf(params, x))
        g = _sample_gibbs(cfg, spec, n, S, rng)
        d = g.draws if kind == "unstructured-sigma" else g.inverted().draws
        return Posterior(d, "sigma" if kind == "unstructured-sigma" else "omega", None,
                         extras={"min_ess": g.diagnostics.get("min_ess", math.nan)})
    spec = build_prior(pc, p, n, truth.graph)
    psi = spec.psi3
    if kind == "graph-known":
        post = gwishart_posterior(truth.graph, spec.beta, psi, n, S)
        return Posterior(post.sample(rng, size).draws, "omega", post.logpdf, truth.graph)
    # graph-unknown: posterior restricted to G-hat, weighted by pi(G-hat | Y)
    opts = cfg.section("graph")
    mode = ghat_mode or opts.get("ghat", "estimate")
    ghat = truth.graph if mode == "truth" else graph_estimate(S, n, float(opts.get("c", 3.0)))
    extras = {"ghat_edges": float(ghat.n_edges), "ghat_is_truth": float(ghat == truth.graph)}
    if not is_decomposable(ghat):
        extras["ghat_decomposable"] = 0.0
        return Posterior(None, "omega", None, ghat, 0.0, extras)
    extras["ghat_decomposable"] = 1.0
    w = 1.0
    if p <= EXACT_GRAPH_P and spec.tag == "HierGWishart":
        graphs, prob = exact_graph_posterior(n, S, spec.beta, psi, spec.graph_prior.tau,
                                             spec.graph_prior.R)
        w = float(prob[graphs.index(ghat)]) if ghat in graphs else 0.0
    extras["w_ghat"] = w
    post = gwishart_posterior(ghat, spec.beta, psi, n, S)
    return Posterior(post.sample(rng, size).draws, "omega", post.logpdf, ghat, w, extras)


def anchor_of(cfg, post, S):
    """(anchor matrix, anchor tag) per scenario kind."""
    if cfg.kind == "unstructured-sigma":
        return S, "S"
    if cfg.kind == "unstructured-omega":
        return matcore.symmetrize(np.linalg.inv(S)), "S_inv"
    return mle_graph(post.graph, S).estimate, ("mle_G" if cfg.kind == "graph-known" else "mle_Ghat")


def _limit_gaussian(anchor, graph):
    cov = matcore.smn_halfvec_cov(anchor, anchor, 2.0, graph)
    return Gaussian(np.zeros(cov.shape[0]), cov)


def _coords(theta, anchor, n, mask):
    t = math.sqrt(n) * (theta - anchor)
    v = matcore.vech(t)
    return v if mask is None else v[..., mask]


# ---------------------------------------------------------------- replicate context


@dataclass
class Replicate:
    cfg: object
    gi: int
    ri: int
    n: int
    p: int
    rng: np.random.Generator
    truth: object
    S: np.ndarray


def _replicate(cfg, gi, ri):
    n, p = cfg.grid[gi]
    rng = rng_stream(cfg.seed, gi, ri)
    truth = make_truth(cfg, p)
    S = sample_cov_from(truth.sigma, n, rng) if n > 0 else None
    return Replicate(cfg, gi, ri, n, p, rng, truth, S)


# ---------------------------------------------------------------- bvm


def _divergences(logf, logg, vT, alphas, weight, prefix=""):
    out = {}
    tv = tv_exact_mc(logf, logg, weight=weight)
    out[prefix + "tv"] = (tv.value, tv.mc_stderr)
    h = hellinger_mc(logf, logg, weight=weight)
    out[prefix + "h2"] = (h.value, h.mc_stderr)
    for a in alphas:
        d = d_alpha_mc(logf, logg, alpha=a, weight=weight)
        out[prefix + f"d_alpha[{a:g}]"] = (d.value, d.mc_stderr)
        r = renyi_mc(logf, logg, alpha=a, weight=weight)
        out[prefix + f"renyi[{a:g}]"] = (r.value, r.mc_stderr)
    audit = inequality_audit(logf, logg, weight=weight)
    out[prefix + "audit_pass"] = (float(audit.passed), 0.0)
    worst = max((c.lhs - c.rhs) / c.se if c.se > 0 else (0.0 if c.passed else math.inf)
                for c in audit.checks)
    out[prefix + "audit_worst_z"] = (float(worst), 0.0)
    return out


def bvm_replicate(cfg, gi, ri, ghat_mode=None):
    r = _replicate(cfg, gi, ri)
    post = draw_posterior(cfg, r.truth, r.n, r.S, r.rng, ghat_mode=ghat_mode)
    out = {k: (v, 0.0) for k, v in post.extras.items() if k != "min_ess"}
    if "min_ess" in post.extras:
        out["min_ess"] = (post.extras["min_ess"], 0.0)
    if post.draws is None:
        # no SSMN limit exists on a non-decomposable G-hat; recorded as TV = 1
        out["tv"] = (1.0, 0.0)
        return out
    anchor, _ = anchor_of(cfg, post, r.S)
    graph = post.graph
    mask = matcore.graph_mask(r.p, graph.edges) if graph is not None else None
    g = _limit_gaussian(anchor, graph)
    vT = _coords(post.draws, anchor, r.n, mask)
    methods = cfg.divergence["methods"]
    if post.logpdf is not None:
        dim = vT.shape[1]
        logf = post.logpdf(post.draws) - 0.5 * dim * math.log(r.n)
        logg = g.logpdf(vT)
        out.update(_divergences(logf, logg, vT, cfg.divergence["alphas"], post.weight))
    if post.logpdf is None or "sliced" in methods:
        st = sliced_tv(vT, (g.mean, g.cov), cfg.divergence["directions"], r.rng)
        out["sliced_tv"] = (st.value, st.mc_stderr)
    return out


def _tv_metric(points):
    for m in ("tv", "sliced_tv"):
        if all(m in pt for pt in points):
            return m
    return None


def _kendall_concordant(points, metrics, k):
    """Pairwise orderings of the grid agree across metrics, up to ties within k SE."""
    for a in range(len(points)):
        for b in range(a + 1, len(points)):
            signs = set()
            for m in metrics:
                va, sa = points[a][m]
                vb, sb = points[b][m]
                if abs(va - vb) > k * math.hypot(sa, sb):
                    signs.add(va > vb)
            if len(signs) > 1:
                return False
    return True


def bvm_checks(cfg, agg, extra=None):
    bands = cfg.acceptance
    k = bands.get("decrease_k", (3.0,))[0]
    pts = [agg[gi] for gi in sorted(agg)]
    checks = []
    m = _tv_metric(pts)
    if m is None or not pts:
        return [Check("tv_available", False, "no TV column at some grid point")]
    vals = [pt[m] for pt in pts]
    dec = all(vals[i][0] - vals[i + 1][0] > k * math.hypot(vals[i][1], vals[i + 1][1])
              for i in range(len(vals) - 1))
    checks.append(Check(f"{m}_strictly_decreasing", dec,
                        " > ".join(f"{v:.4g}({s:.2g})" for v, s in vals) + f" [k={k:g}]"))
    if "tv_final_max" in bands:
        cap = bands["tv_final_max"][0]
        checks.append(Check(f"{m}_final_below", vals[-1][0] < cap, f"{vals[-1][0]:.4g} < {cap:g}"))
    if all("audit_pass" in pt for pt in pts):
        allpass = all(pt["audit_pass"][0] == 1.0 for pt in pts)
        checks.append(Check("audit_all_replicates", allpass,
                            ", ".join(f"{pt['audit_pass'][0]:.3g}" for pt in pts)))
        conc_m = [x for x in ("tv", "h2", "d_alpha[0.5]") if all(x in pt for pt in pts)]
        if len(conc_m) > 1:
            checks.append(Check("tv_h2_dalpha_concordant", _kendall_concordant(pts, conc_m, k),
                                ",".join(conc_m)))
    return checks


# ---------------------------------------------------------------- contraction


def contraction_replicate(cfg, gi, ri):
    r = _replicate(cfg, gi, ri)
    opts = cfg.section("contraction")
    mults = float_list(opts.get("multipliers", "1,2,4,8,16"))
    misuse_m = float(opts.get("misuse_multiplier", 1.0))
    kind = cfg.kind
    size = cfg.draws
    if kind == "graph-unknown" and r.p <= EXACT_GRAPH_P and cfg.prior.family == "HierGWishart":
        spec = build_prior(cfg.prior, r.p, r.n)
        graphs, prob = exact_graph_posterior(r.n, r.S, spec.beta, spec.psi3, spec.graph_prior.tau,
                                             spec.graph_prior.R)
        counts = r.rng.multinomial(size, prob)
        parts = [gwishart_posterior(g, spec.beta, spec.psi3, r.n, r.S).sample(r.rng, int(c)).draws
                 for g, c in zip(graphs, counts) if c > 0]
        draws, scale = np.concatenate(parts), "omega"
    else:
        post = draw_posterior(cfg, r.truth, r.n, r.S, r.rng, size)
        if post.draws is None:
            raise RuntimeError("estimated graph is not decomposable")
        draws, scale = post.draws, post.scale
    target = r.truth.sigma if scale == "sigma" else r.truth.omega
    diff = draws - target
    spec_d = np.linalg.norm(diff, ord=2, axis=(1, 2))
    frob_d = np.linalg.norm(diff, axis=(1, 2))
    if kind.startswith("unstructured"):
        rs = rf = math.sqrt(r.p / r.n)
    else:
        info = rate_info(r.truth.graph)
        rs, rf = math.sqrt(info.spectral_sq(r.n, r.p)), math.sqrt(info.frobenius_sq(r.n, r.p))
    out = {}
    N = draws.shape[0]

    def mass(ind):
        m = float(np.mean(ind))
        return m, math.sqrt(m * (1 - m) / N)

    for M in mults:
        out[f"outside_spectral[M={M:g}]"] = mass(spec_d > M * rs)
        out[f"outside_frobenius[M={M:g}]"] = mass(frob_d > M * rf)
    fast = misuse_m * math.sqrt(1.0 / r.n)
    out["misuse_spectral"] = mass(spec_d > fast)
    out["misuse_frobenius"] = mass(frob_d > fast)
    out["mean_spectral_over_rate"] = (float(np.mean(spec_d) / rs), float(np.std(spec_d) / rs / math.sqrt(N)))
    out["mean_frobenius_over_rate"] = (float(np.mean(frob_d) / rf), float(np.std(frob_d) / rf / math.sqrt(N)))
    return out


def contraction_checks(cfg, agg, extra=None):
    bands = cfg.acceptance
    mults = sorted(float_list(cfg.section("contraction").get("multipliers", "1,2,4,8,16")))
    checks = []
    for gi in sorted(agg):
        pt = agg[gi]
        n = cfg.grid[gi][0]
        for norm in ("spectral", "frobenius"):
            seq = [pt[f"outside_{norm}[M={M:g}]"][0] for M in mults]
            mono = all(seq[i] >= seq[i + 1] for i in range(len(seq) - 1))
            checks.append(Check(f"n={n}:{norm}_monotone_in_M", mono,
                                " >= ".join(f"{v:.3g}" for v in seq)))
            if "calibrated_m" in bands and "outside_max" in bands:
                M = bands["calibrated_m"][0]
                key = f"outside_{norm}[M={M:g}]"
                if key in pt:
                    v = pt[key][0]
                    cap = bands["outside_max"][0]
                    checks.append(Check(f"n={n}:{norm}_outside_at_M={M:g}", v < cap, f"{v:.4g} < {cap:g}"))
            if "misuse_min" in bands:
                v = pt[f"misuse_{norm}"][0]
                lo = bands["misuse_min"][0]
                checks.append(Check(f"n={n}:{norm}_misuse_near_one", v > lo, f"{v:.4g} > {lo:g}"))
    return checks


# ---------------------------------------------------------------- coverage


def _functionals(cfg):
    opts = cfg.section("coverage")
    try:
        return [parse_functional(s) for s in str_list(opts.get("functionals", "sigma_11"))]
    except ValueError as exc:
        raise ConfigError(str(exc), "[coverage] functionals") from None


def coverage_replicate(cfg, gi, ri):
    r = _replicate(cfg, gi, ri)
    levels = float_list(cfg.section("coverage").get("levels", "0.9"))
    post = draw_posterior(cfg, r.truth, r.n, r.S, r.rng)
    if post.draws is None:
        raise RuntimeError("estimated graph is not decomposable")
    out = {}
    for fscale, i, j in _functionals(cfg):
        if fscale == post.scale:
            draws = post.draws
        elif post.graph is None:
            draws = np.linalg.inv(post.draws)
        else:
            raise RuntimeError("sigma functionals need an unstructured scenario")
        if fscale == "sigma":
            anchor, graph, truth = r.S, None, r.truth.sigma
        elif post.graph is None:
            anchor, graph, truth = matcore.symmetrize(np.linalg.inv(r.S)), None, r.truth.omega
        else:
            anchor, graph, truth = mle_graph(post.graph, r.S).estimate, post.graph, r.truth.omega
        cov = matcore.smn_halfvec_cov(anchor, anchor, 2.0, graph)
        rows, cols = matcore.vech_indices(r.p)
        keep = np.ones(rows.size, bool) if graph is None else matcore.graph_mask(r.p, graph.edges)
        hits = np.flatnonzero((rows[keep] == i) & (cols[keep] == j))
        if hits.size == 0:
            raise RuntimeError(f"functional ({i + 1},{j + 1}) is not a free coordinate")
        sd = math.sqrt(cov[hits[0], hits[0]] / r.n)
        x = draws[:, i, j]
        name = f"{fscale}_{i + 1}{j + 1}"
        for q in levels:
            z = stats.norm.ppf(0.5 + q / 2)
            a_lo, a_hi = anchor[i, j] - z * sd, anchor[i, j] + z * sd
            b_lo, b_hi = np.quantile(x, [0.5 - q / 2, 0.5 + q / 2])
            tag = f"[{name},q={q:g}]"
            out["covered_smn" + tag] = (float(a_lo <= truth[i, j] <= a_hi), 0.0)
            out["covered_post" + tag] = (float(b_lo <= truth[i, j] <= b_hi), 0.0)
            out["length_ratio" + tag] = (float((a_hi - a_lo) / (b_hi - b_lo)), 0.0)
    return out


def coverage_checks(cfg, agg, extra=None):
    bands = cfg.acceptance
    checks = []
    for gi in sorted(agg):
        pt = agg[gi]
        n = cfg.grid[gi][0]
        for key, (v, se) in sorted(pt.items()):
            if key.startswith("covered_smn"):
                tag = key[len("covered_smn"):]
                q = float(tag.rsplit("q=", 1)[1].rstrip("]"))
                band = bands.get(f"coverage_band_{q:g}")
                if band and len(band) == 2:
                    checks.append(Check(f"n={n}:coverage{tag}", band[0] <= v <= band[1],
                                        f"{v:.4g} (se {se:.2g}) in [{band[0]:g}, {band[1]:g}]"))
            if key.startswith("length_ratio"):
                band = bands.get("length_ratio_band")
                if band and len(band) == 2:
                    checks.append(Check(f"n={n}:{key}", band[0] <= v <= band[1],
                                        f"{v:.4g} in [{band[0]:g}, {band[1]:g}]"))
    return checks


# ---------------------------------------------------------------- flatness


def _flat_eps(cfg, n, p, truth):
    raw = cfg.section("flatness").get("eps", "rate")
    if raw != "rate":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError("eps must be 'rate' or a number", "[flatness] eps") from None
    if cfg.kind.startswith("unstructured"):
        return math.sqrt(p / n)
    return math.sqrt(rate_info(truth.graph).spectral_sq(n, p))


def flatness_replicate(cfg, gi, ri):
    r = _replicate(cfg, gi, ri)
    opts = cfg.section("flatness")
    budget = int(opts.get("budget", 60))
    radii = int(opts.get("radii", 24))
    polish = int(opts.get("polish_rounds", 30))
    eps = _flat_eps(cfg, r.n, r.p, r.truth)
    out = {"eps": (eps, 0.0)}
    for pc in cfg.priors:
        if pc.family == "GWishart":
            spec = build_prior(pc, r.p, r.n, r.truth.graph)
            center = mle_graph(r.truth.graph, r.S).estimate
            scale, graph = "omega", r.truth.graph
        elif cfg.kind == "unstructured-omega":
            spec = build_prior(pc, r.p, r.n)
            center, scale, graph = matcore.symmetrize(np.linalg.inv(r.S)), "omega", None
        else:
            spec = build_prior(pc, r.p, r.n)
            center, scale, graph = r.S, "sigma", None
        res = flatness_rho(spec, center, eps, r.n, budget=budget, rng=r.rng, scale=scale, graph=graph,
                           radii=radii, polish_rounds=polish)
        out[f"rho[{pc.label}]"] = (res.value, 0.0)
    return out


def flatness_checks(cfg, agg, extra=None):
    bands = cfg.acceptance
    k = bands.get("decrease_k", (3.0,))[0]
    neg_min = bands.get("negative_min", (0.5,))[0]
    pts = [agg[gi] for gi in sorted(agg)]
    checks = []
    for pc in cfg.priors:
        key = f"rho[{pc.label}]"
        vals = [pt[key] for pt in pts]
        txt = " > ".join(f"{v:.3g}" for v, _ in vals)
        if pc.psi_n_power > 0:
            ok = all(v >= neg_min for v, _ in vals)
            checks.append(Check(f"{pc.label}_nonvanishing", ok, f"{txt} all >= {neg_min:g}"))
        else:
            ok = all(vals[i][0] - vals[i + 1][0] > k * math.hypot(vals[i][1], vals[i + 1][1])
                     for i in range(len(vals) - 1))
            checks.append(Check(f"{pc.label}_decreasing", ok, txt))
    return checks


# ---------------------------------------------------------------- graph selection


def graph_select_replicate(cfg, gi, ri):
    r = _replicate(cfg, gi, ri)
    if r.p > EXACT_GRAPH_P:
        raise ConfigError(f"graph-select needs p <= {EXACT_GRAPH_P}", "[grid] p")
    pc = cfg.prior
    spec = build_prior(pc, r.p, r.n)
    beta = spec.beta
    psi = spec.psi3
    taus = float_list(cfg.section("graph_select").get("tau_sweep", "")) or ()
    out = {}

    def one(tau, suffix):
        graphs, prob = exact_graph_posterior(r.n, r.S, beta, psi, tau, pc.R)
        g0 = graphs.index(r.truth.graph) if r.truth.graph in graphs else None
        top = int(np.argmax(prob))
        out["pi_G0" + suffix] = (float(prob[g0]) if g0 is not None else 0.0, 0.0)
        out["modal_hit" + suffix] = (float(top == g0), 0.0)
        out["modal_edges" + suffix] = (float(graphs[top].n_edges), 0.0)
        edges = np.array([g.n_edges for g in graphs], float)
        out["mean_edges" + suffix] = (float(prob @ edges), 0.0)
        return graphs, prob

    graphs, prob = one(pc.tau, "")
    if r.n == 0:
        lp = np.array([log_graph_prior(g, pc.tau, pc.R) for g in graphs])
        prior = np.exp(lp - special.logsumexp(lp))
        out["max_abs_prior_gap"] = (float(np.max(np.abs(prob - prior))), 0.0)
    for tau in taus:
        one(tau, f"[tau={tau:g}]")
    return out


def graph_select_checks(cfg, agg, extra=None):
    bands = cfg.acceptance
    k = bands.get("increase_k", (0.0,))[0]
    gis = [gi for gi in sorted(agg) if cfg.grid[gi][0] > 0]
    checks = []
    vals = [agg[gi]["pi_G0"] for gi in gis]
    inc = all(vals[i + 1][0] - vals[i][0] > k * math.hypot(vals[i][1], vals[i + 1][1])
              for i in range(len(vals) - 1))
    checks.append(Check("pi_G0_increasing", inc, " < ".join(f"{v:.4g}({s:.2g})" for v, s in vals)))
    if "pi_final_min" in bands and vals:
        lo = bands["pi_final_min"][0]
        checks.append(Check("pi_G0_final_above", vals[-1][0] > lo, f"{vals[-1][0]:.4g} > {lo:g}"))
    for gi in sorted(agg):
        if cfg.grid[gi][0] == 0 and "max_abs_prior_gap" in agg[gi]:
            gap = agg[gi]["max_abs_prior_gap"][0]
            checks.append(Check("n=0_posterior_equals_prior", gap < 1e-12, f"gap {gap:.3g}"))
    taus = sorted(float_list(cfg.section("graph_select").get("tau_sweep", "")) or ())
    if len(taus) > 1:
        for gi in sorted(agg):
            for m in ("modal_edges", "mean_edges"):
                seq = [agg[gi][f"{m}[tau={t:g}]"][0] for t in taus]
                ok = all(seq[i] >= seq[i + 1] for i in range(len(seq) - 1))
                checks.append(Check(f"n={cfg.grid[gi][0]}:{m}_nonincreasing_in_tau", ok,
                                    " >= ".join(f"{v:.4g}" for v in seq)))
    return checks


# ---------------------------------------------------------------- divergence audit


def closed_form_pair(alphas):
    """TV, H^2, D_alpha and Renyi between N(0,1) and N(1,1)."""
    out = {"tv": 2 * stats.norm.cdf(0.5) - 1, "h2": 2 * (1 - math.exp(-1 / 8))}
    for a in alphas:
        aff = math.exp(-a * (1 - a) / 2)
        out[f"d_alpha[{a:g}]"] = (1 - aff) / (a * (1 - a))
        out[f"renyi[{a:g}]"] = a / 2
    return out


def divergence_audit_replicate(cfg, gi, ri):
    rng = rng_stream(cfg.seed, gi, ri, 1)
    x = rng.standard_normal(cfg.draws)
    logf = stats.norm.logpdf(x)
    logg = stats.norm.logpdf(x, loc=1.0)
    out = _divergences(logf, logg, x[:, None], cfg.divergence["alphas"], 1.0, prefix="pair:")
    out.update(bvm_replicate(cfg, gi, ri))
    return out


def divergence_audit_checks(cfg, agg, extra=None):
    k = cfg.acceptance.get("match_k", (3.0,))[0]
    ref = closed_form_pair(cfg.divergence["alphas"])
    checks = []
    for gi in sorted(agg):
        pt = agg[gi]
        n = cfg.grid[gi][0]
        for m, truth in ref.items():
            v, se = pt["pair:" + m]
            checks.append(Check(f"n={n}:pair_{m}_matches_closed_form", abs(v - truth) <= k * se,
                                f"{v:.5g} vs {truth:.5g} (se {se:.2g})"))
        checks.append(Check(f"n={n}:pair_audit_all_replicates", pt["pair:audit_pass"][0] == 1.0,
                            f"{pt['pair:audit_pass'][0]:.3g}"))
        if "audit_pass" in pt:
            checks.append(Check(f"n={n}:bvm_audit_all_replicates", pt["audit_pass"][0] == 1.0,
                                f"{pt['audit_pass'][0]:.3g}"))
    return checks


# ---------------------------------------------------------------- engine


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


COMMANDS = {
    "bvm": (bvm_replicate, bvm_checks),
    "contraction": (contraction_replicate, contraction_checks),
    "coverage": (coverage_replicate, coverage_checks),
    "flatness": (flatness_replicate, flatness_checks),
    "graph-select": (graph_select_replicate, graph_select_checks),
    "divergence-audit": (divergence_audit_replicate, divergence_audit_checks),
}


@dataclass
class RunResult:
    command: str
    rows: list
    aggregates: dict
    failures: list
    aborted: list
    checks: list
    streams: list
    wall_time: float

    @property
    def exit_code(self):
        return 1 if self.aborted else 0


def _task(args):
    cfg, command, gi, ri = args
    fn = COMMANDS[command][0]
    try:
        return gi, ri, fn(cfg, gi, ri), None
    except ConfigError:
        raise
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError, DivergenceError) as exc:
        return gi, ri, None, f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # noqa: BLE001 - record unexpected replicate failures too
        tb = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return gi, ri, None, tb


def validate(cfg, command):
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    check_prior_kind(cfg)
    if command != "flatness" and len(cfg.priors) > 1:
        raise ConfigError("several [prior:*] sections are only allowed for flatness")
    if command == "coverage":
        _functionals(cfg)
    for _, p in cfg.grid:
        make_truth(cfg, p)


def _binomial(metric):
    return metric.startswith(BINOMIAL_PREFIXES)


def aggregate(values):
    """Mean and standard error over replicates for each metric."""
    out = {}
    keys = sorted(set().union(*[v.keys() for v in values])) if values else []
    for key in keys:
        xs = np.array([v[key][0] for v in values if key in v], float)
        ses = np.array([v[key][1] for v in values if key in v], float)
        R = xs.size
        m = float(np.mean(xs))
        if _binomial(key):
            se = math.sqrt(max(m * (1 - m), 0.0) / R)
        elif R > 1:
            se = float(np.std(xs, ddof=1) / math.sqrt(R))
        else:
            se = float(ses[0])
        out[key] = (m, se)
    return out


def execute(cfg, command, threads=1):
    """Run every (grid point, replicate) task and assemble rows, aggregates and checks."""
    validate(cfg, command)
    t0 = time.perf_counter()
    tasks = [(cfg, command, gi, ri) for gi in range(len(cfg.grid)) for ri in range(cfg.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        results = [_task(t) for t in tasks]
    per_point = {gi: [] for gi in range(len(cfg.grid))}
    failures, aborted, rows, streams = [], [], [], []
    graph_info = {}
    for gi, ri, metrics, err in sorted(results, key=lambda x: (x[0], x[1])):
        n, p = cfg.grid[gi]
        seed = stream_seed(cfg.seed, gi, ri)
        streams.append({"grid_index": gi, "n": n, "p": p, "replicate": ri, "seed": seed})
        if err is not None:
            failures.append({"grid_index": gi, "n": n, "p": p, "replicate": ri, "error": err})
            continue
        per_point[gi].append(metrics)
        for metric, (v, se) in metrics.items():
            rows.append(_row(cfg, command, n, p, ri, seed, metric, v, se, graph_info))
    aggregates = {}
    for gi, vals in per_point.items():
        n, p = cfg.grid[gi]
        nfail = cfg.replicates - len(vals)
        if nfail > ABORT_FRACTION * cfg.replicates or not vals:
            aborted.append({"grid_index": gi, "n": n, "p": p, "failures": nfail})
            continue
        agg = aggregate(vals)
        aggregates[gi] = agg
        for metric, (v, se) in agg.items():
            rows.append(_row(cfg, command, n, p, -1, cfg.seed, metric, v, se, graph_info))
    checks = []
    if aborted:
        checks.append(Check("no_aborted_grid_points", False,
                            "; ".join(f"n={a['n']},p={a['p']}: {a['failures']} failures" for a in aborted)))
    elif aggregates:
        checks.extend(COMMANDS[command][1](cfg, aggregates))
    rows.sort(key=lambda r: (r["n"], r["p"], r["replicate"], r["metric"]))
    return RunResult(command, rows, aggregates, failures, aborted, checks, streams,
                     time.perf_counter() - t0)


def _row(cfg, command, n, p, ri, seed, metric, v, se, cache):
    if p not in cache:
        truth = make_truth(cfg, p)
        cache[p] = rate_info(scenario_graph(cfg, truth))
    cols = assumption_columns(n, p, cache[p])
    return {"scenario": cfg.name, "command": command, "n": n, "p": p, "replicate": ri, "seed": seed,
            "metric": metric, "value": v, "se": se, **cols}
