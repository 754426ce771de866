"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import math

import numpy as np
import pytest
from scipy import stats

from pveinfer import (
    CondDensityContext,
    NoiseModel,
    center_reduce,
    compute_svd,
    conditional_mean,
    ncchisq_cdf,
    ncchisq_ppf,
    population_pve,
    sample_pve,
    survival_prob,
)
from pveinfer.inference import build_context, invert_survival, mle_objective, solve_mle
from pveinfer.selection import derivative_rule, select_rank, truncation_set_derivative
from pveinfer.simulate import SimConfig, gen_theta, run_coverage, run_power, run_ratio, run_type1

from conftest import record
from test_density import riemann_survival

pytestmark = pytest.mark.acceptance


def test_type1_uniformity():
    cfg = SimConfig.for_experiment("type1", n=50, p=10, sigma_grid=(1.0,), rule="zg", reps=2000, seed=101)
    res = run_type1(cfg)
    k1 = res.records(k=1)[0]
    extra = res.extras["sigma=1.0"]
    pooled = extra["pooled_selective"]
    naive_mean = extra["nonselective_at_selected_r"]["mean"]
    errors = sum(rec["errors"] for rec in res.summary)
    ok = k1["selective_ks_pvalue"] > 0.01 and pooled["ks_pvalue"] > 0.01 and naive_mean < 0.45 and errors == 0
    record(1, ok, f"type-1: KS p (k=1) {k1['selective_ks_pvalue']:.3f}, KS p (pooled, "
                  f"{pooled['count']} values) {pooled['ks_pvalue']:.3f}, "
                  f"non-selective mean at k=r {naive_mean:.3f}, errors {errors}")
    assert ok


def test_selective_coverage():
    cfg = SimConfig.for_experiment("coverage", n=50, p=10, rank=5, sigma_grid=(0.1,), c=1.0,
                                   alpha_grid=(0.1, 0.5, 0.9), alpha_split=0.75, reps=1000, seed=202)
    res = run_coverage(cfg)
    worst = None
    ok = True
    for rec in res.summary:
        slack = rec["selective_coverage"] - (rec["nominal"] - 2 * rec["coverage_se"])
        ok &= slack >= 0 and rec["errors"] == 0
        if worst is None or slack < worst[0]:
            worst = (slack, rec)
    rec = worst[1]
    record(2, ok, f"coverage: {len(res.summary)} (alpha, k) cells; tightest alpha={rec['alpha']} "
                  f"k={rec['k']} coverage {rec['selective_coverage']:.3f} vs nominal {rec['nominal']:.2f} "
                  f"(SE {rec['coverage_se']:.3f})")
    assert ok


def _spectrum(rng, p):
    kind = rng.integers(3)
    if kind == 0:
        s = rng.uniform(0.1, 10, p)
    elif kind == 1:
        s = np.cumsum(rng.exponential(1.0, p))
    else:
        centers = rng.uniform(1, 10, 2)
        s = rng.choice(centers, p) + rng.normal(0, 0.3, p)
    return np.sort(np.abs(s) + 1e-3)[::-1]


def _derivative_rank_many(lam):
    kappa = lam[:, :-2] - 2 * lam[:, 1:-1] + lam[:, 2:]
    return np.argmax(kappa, axis=1) + 1


def test_truncation_set_oracle():
    rng = np.random.default_rng(303)
    disagreements = checked = 0
    for i in range(500):
        p = 5 if i % 2 == 0 else 10
        s = _spectrum(rng, p)
        r = derivative_rule(s)
        for k in range(1, r + 1):
            ts = truncation_set_derivative(s, k)
            lower = s[k] if k < p else 0.0
            upper = s[k - 2] if k > 1 else 3.0 * s[0]
            grid = np.linspace(lower, upper, 2000)
            lam = np.tile(s * s, (grid.size, 1))
            lam[:, k - 1] = grid * grid
            direct = _derivative_rank_many(lam) >= k
            member = np.array([ts.contains(t) for t in grid])
            bounds = np.array([b for iv in ts.intervals for b in iv if math.isfinite(b)])
            if bounds.size:
                band = np.min(np.abs(grid[:, None] - bounds[None, :]), axis=1) <= 1e-9 * np.maximum(np.abs(grid), 1.0)
            else:
                band = np.zeros(grid.size, bool)
            disagreements += int(np.sum((direct != member) & ~band))
            checked += int(np.sum(~band))
    ok = disagreements == 0
    record(3, ok, f"closed-form truncation set vs indicator: {disagreements} disagreements "
                  f"over {checked} grid points")
    assert ok


def test_survival_oracle():
    rng = np.random.default_rng(404)
    worst_err = worst_mono = 0.0
    for _ in range(100):
        p = int(rng.integers(3, 8))
        n = p + int(rng.integers(0, 10))
        s = np.sort(rng.uniform(0.2, 5.0, p))[::-1]
        k = int(rng.integers(1, p + 1))
        sigma2 = float(rng.uniform(0.1, 1.5))
        ctx = CondDensityContext.from_singular_values(s, k, n, sigma2, "none")
        delta = float(s[k - 1] + rng.normal(0, 1))
        got = survival_prob(delta, ctx, s[k - 1])
        worst_err = max(worst_err, abs(got - riemann_survival(s, k, n, sigma2, delta)))
        grid = np.linspace(delta - 3, delta + 3, 20)
        vals = np.array([survival_prob(d, ctx, s[k - 1]) for d in grid])
        worst_mono = max(worst_mono, float(np.max(-np.diff(vals), initial=0.0)))
    ok = worst_err < 1e-6 and worst_mono < 1e-9
    record(4, ok, f"survival vs 1e6-node Riemann: max error {worst_err:.2e}; "
                  f"largest monotonicity violation {worst_mono:.2e}")
    assert ok


def test_ci_self_consistency():
    rng = np.random.default_rng(505)
    worst = 0.0
    count = 0
    while count < 200:
        rule = ("zg", "derivative")[count % 2]
        n, p = 30, 6
        sigma = float(rng.uniform(0.2, 1.0))
        theta = gen_theta(n, p, int(rng.integers(1, 4)), rng)
        x = theta + sigma * rng.standard_normal((n, p))
        svd = compute_svd(x)
        noise = NoiseModel(sigma * sigma)
        r = derivative_rule(svd.s) if rule == "derivative" else None
        ctx_k = 1 if r is None else int(rng.integers(1, r + 1))
        ctx = build_context(svd, ctx_k, rule, noise)
        alpha1 = float(rng.uniform(0.05, 0.5))
        lo, hi = invert_survival(ctx, svd.s[ctx_k - 1], alpha1)
        e_lo = abs(survival_prob(lo, ctx, svd.s[ctx_k - 1]) - alpha1 / 2)
        e_hi = abs(survival_prob(hi, ctx, svd.s[ctx_k - 1]) - (1 - alpha1 / 2))
        worst = max(worst, e_lo, e_hi)
        count += 1
    ok = worst < 1e-6
    record(5, ok, f"CI endpoints on {count} instances: max |P - target| {worst:.2e}")
    assert ok


def test_noncentral_chisq():
    worst_rt = worst_central = 0.0
    for df in (10, 100, 500):
        for lam in (0.0, 1.0, 50.0):
            for q in (0.01, 0.5, 0.99):
                worst_rt = max(worst_rt, abs(ncchisq_cdf(ncchisq_ppf(q, df, lam), df, lam) - q))
        for x in np.linspace(0.1, 3 * df, 25):
            worst_central = max(worst_central, abs(ncchisq_cdf(x, df, 0.0) - stats.chi2.cdf(x, df)))
    ok = worst_rt < 1e-8 and worst_central < 1e-10
    record(6, ok, f"noncentral chi-squared: roundtrip {worst_rt:.2e}, central agreement {worst_central:.2e}")
    assert ok


def test_centering_equivalence():
    rng = np.random.default_rng(707)
    worst_s = worst_pve = 0.0
    for _ in range(100):
        p = int(rng.integers(2, 6))
        n = p + 1 + int(rng.integers(0, 35))
        theta = rng.normal(size=(n, p)) + rng.normal(size=p) * 5
        x = theta + rng.normal(size=(n, p))
        cx = x - x.mean(axis=0)
        s_c = np.linalg.svd(cx, compute_uv=False)
        svd_h = compute_svd(center_reduce(x))
        worst_s = max(worst_s, float(np.max(np.abs(svd_h.s - s_c) / s_c[0])))
        svd_c = compute_svd(cx)
        c_theta = theta - theta.mean(axis=0)
        h_theta = center_reduce(theta)
        for k in range(1, p + 1):
            a = sample_pve(svd_c.s, k) - sample_pve(svd_h.s, k)
            b = (population_pve(svd_c.u(k), svd_c.v(k), c_theta)
                 - population_pve(svd_h.u(k), svd_h.v(k), h_theta))
            worst_pve = max(worst_pve, abs(a), abs(b))
    ok = worst_s < 1e-9 and worst_pve < 1e-9
    record(7, ok, f"centering: spectra rel. diff {worst_s:.2e}, PVE diff {worst_pve:.2e}")
    assert ok


def test_mle_stationarity():
    rng = np.random.default_rng(808)
    worst_res = 0.0
    worst_grid = 0.0
    for i in range(100):
        n, p = 30, 6
        sigma = float(rng.uniform(0.2, 1.0))
        theta = gen_theta(n, p, 3, rng)
        svd = compute_svd(theta + sigma * rng.standard_normal((n, p)))
        noise = NoiseModel(sigma * sigma)
        k = int(rng.integers(1, select_rank(svd.s, "zg") + 1))
        ctx = build_context(svd, k, "zg", noise)
        s_k = svd.s[k - 1]
        d = solve_mle(ctx, s_k)
        worst_res = max(worst_res, abs(conditional_mean(d, ctx) - s_k) / s_k)
        lo, hi = min(d, s_k) - 3 * sigma, max(d, s_k) + 3 * sigma
        grid = np.linspace(lo, hi, 401)
        obj = [mle_objective(g, ctx, s_k) for g in grid]
        step = grid[1] - grid[0]
        worst_grid = max(worst_grid, abs(grid[int(np.argmax(obj))] - d) / step)
    ok = worst_res < 1e-6 and worst_grid <= 1.0
    record(8, ok, f"MLE: max relative stationarity residual {worst_res:.2e}; "
                  f"grid argmax within {worst_grid:.2f} grid steps")
    assert ok


def test_ratio_trend():
    sigmas = (0.01, 0.1, 0.5, 1.0)
    cfg = SimConfig.for_experiment("ratio", n=50, p=10, rank=5, sigma_grid=sigmas, reps=300, seed=909)
    res = run_ratio(cfg)
    problems = []
    for k in range(1, 6):
        vals = [res.records(sigma=s, k=k)[0]["median_log_ratio"] for s in sigmas]
        if abs(vals[0]) > 0.02:
            problems.append(f"k={k} at sigma=0.01: {vals[0]:+.4f}")
        for a, b, s0, s1 in zip(vals, vals[1:], sigmas, sigmas[1:]):
            if b < a:
                problems.append(f"k={k} drops {a:+.4f} -> {b:+.4f} from sigma {s0} to {s1}")
    ok = not problems
    record(9, ok, "ratio trend: " + ("median log ratio within 0.02 at sigma=0.01 and nondecreasing"
                                     if ok else "; ".join(problems)))
    assert ok, problems


def test_power_monotonicity():
    sigmas = (0.1, 0.4, 1.0)
    cfg = SimConfig.for_experiment("power", n=50, p=10, rank=5, sigma_grid=sigmas, reps=500, seed=1010)
    res = run_power(cfg)
    problems = []
    det = [res.records(sigma=s, k=1)[0] for s in sigmas]
    for a, b in zip(det, det[1:]):
        slack = math.hypot(a["detection_se"], b["detection_se"])
        if b["detection_probability"] > a["detection_probability"] + slack:
            problems.append(f"detection rises at sigma {b['sigma']}")
    for k in (1, 3, 5):
        recs = [res.records(sigma=s, k=k) for s in sigmas]
        vals = [(r[0]["selective_power"], r[0]["selective_power_se"]) if r else None for r in recs]
        for s, a, b in zip(sigmas[1:], vals, vals[1:]):
            if a is None or b is None:
                continue
            if b[0] > a[0] + math.hypot(a[1], b[1]):
                problems.append(f"power at k={k} rises at sigma {s}")
    curve = ", ".join(f"{d['detection_probability']:.3f}" for d in det)
    powers = "; ".join(
        f"k={k}: " + ", ".join(f"{res.records(sigma=s, k=k)[0]['selective_power']:.3f}"
                                if res.records(sigma=s, k=k) else "n/a" for s in sigmas)
        for k in (1, 3, 5)
    )
    ok = not problems
    record(10, ok, f"power: detection over sigma {sigmas} = {curve}; selective power {powers}")
    assert ok, problems
