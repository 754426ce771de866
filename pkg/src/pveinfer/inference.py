"""Selective p-values, confidence intervals and point estimates for the
population PVE, plus Gaussian data thinning."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .core import NoiseModel, SvdFactorization, as_data_matrix, compute_svd, sample_pve
from .density import CondDensityContext, conditional_mean, log_h, log_normalizer, survival_prob
from .distributions import denom_ci
from .errors import NumericalFailureError
from .selection import DEFAULT_GRID_SIZE, SelectionRule, TruncationSet, as_rule, select_rank

CI_TOL = 1e-6
MLE_RTOL = 1e-6
_MAX_DOUBLINGS = 200


@dataclass(frozen=True)
class ThinnedPair:
    """``x1 = X + c E'`` and ``x2 = X - E'/c`` with ``E'`` i.i.d. N(0, sigma^2)."""

    x1: np.ndarray
    x2: np.ndarray
    c: float
    sigma1_2: float
    sigma_c2: float
    noise_source: str = "known"

    def reconstruct(self) -> np.ndarray:
        c = self.c
        return (self.x1 / c + c * self.x2) / (c + 1.0 / c)

    @property
    def noise1(self) -> NoiseModel:
        return NoiseModel(self.sigma1_2, self.noise_source)


def thin(x, c: float, noise: NoiseModel, seed=None) -> ThinnedPair:
    """Split ``x`` into two independent matrices sharing its mean.

    ``x1`` has variance ``sigma^2 (1 + c^2)`` and ``x2`` has
    ``sigma^2 (1 + 1/c^2)``.
    """
    if c <= 0:
        raise ValueError("thinning constant c must be positive")
    x = np.asarray(x, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e = rng.normal(0.0, math.sqrt(noise.sigma2), size=x.shape)
    return ThinnedPair(
        x1=x + c * e,
        x2=x - e / c,
        c=float(c),
        sigma1_2=noise.sigma2 * (1.0 + c * c),
        sigma_c2=noise.sigma2 * (1.0 + 1.0 / (c * c)),
        noise_source=noise.source,
    )


def build_context(
    svd: SvdFactorization, k: int, rule, noise: NoiseModel, grid_size: int = DEFAULT_GRID_SIZE,
    trunc: TruncationSet | None = None,
) -> CondDensityContext:
    rule = as_rule(rule)
    r = select_rank(svd.s, rule)
    if not 1 <= k <= r:
        raise ValueError(f"index k={k} was not selected (r={r})")
    return CondDensityContext.from_singular_values(
        svd.s, k, svd.n, noise.sigma2, rule, grid_size, trunc=trunc
    )


def p_value(svd: SvdFactorization, k: int, rule, noise: NoiseModel,
            grid_size: int = DEFAULT_GRID_SIZE) -> float:
    """Selective p-value for H0: PVE_k = 0 (the survival probability at delta = 0)."""
    ctx = build_context(svd, k, rule, noise, grid_size)
    return survival_prob(0.0, ctx, svd.s[k - 1])


def _bracket_increasing(f, start: float, step: float) -> tuple[float, float]:
    """Bracket the root of an increasing function by doubling steps."""
    f0 = f(start)
    if f0 == 0:
        return start, start
    direction = 1.0 if f0 < 0 else -1.0
    prev = start
    for _ in range(_MAX_DOUBLINGS):
        cur = prev + direction * step
        fc = f(cur)
        if (fc > 0) if direction > 0 else (fc < 0):
            return (prev, cur) if direction > 0 else (cur, prev)
        prev = cur
        step *= 2.0
    raise NumericalFailureError("bracket expansion failed after 200 doublings")


def _solve_increasing(f, start: float, step: float) -> float:
    lo, hi = _bracket_increasing(f, start, step)
    if lo == hi:
        return lo
    return optimize.brentq(f, lo, hi, xtol=1e-12 * max(1.0, abs(lo), abs(hi)), rtol=1e-15, maxiter=500)


def invert_survival(ctx: CondDensityContext, s_k: float, alpha1: float) -> tuple[float, float]:
    """Endpoints where the survival probability equals alpha1/2 and 1 - alpha1/2."""
    if not 0 < alpha1 < 1:
        raise ValueError("alpha1 must lie in (0, 1)")
    step = math.sqrt(ctx.sigma2)
    bounds = []
    for target in (0.5 * alpha1, 1.0 - 0.5 * alpha1):
        f = lambda d, target=target: survival_prob(d, ctx, s_k) - target  # noqa: E731
        root = _solve_increasing(f, s_k, step)
        if abs(f(root)) >= CI_TOL:
            raise NumericalFailureError(
                f"CI endpoint residual {abs(f(root)):.2e} exceeds {CI_TOL} (target {target})"
            )
        bounds.append(root)
    return bounds[0], bounds[1]


def ci_numerator(svd: SvdFactorization, k: int, rule, noise: NoiseModel, alpha1: float,
                 grid_size: int = DEFAULT_GRID_SIZE) -> tuple[float, float]:
    """1 - alpha1 selective interval for ``u_k^T Theta v_k``."""
    ctx = build_context(svd, k, rule, noise, grid_size)
    return invert_survival(ctx, svd.s[k - 1], alpha1)


def square_interval(iv: tuple[float, float]) -> tuple[float, float]:
    """Map an interval for delta to one for delta^2."""
    lo, hi = iv
    a, b = abs(lo), abs(hi)
    lower = min(a, b) ** 2 if lo * hi > 0 else 0.0
    return lower, max(a, b) ** 2


def solve_mle(ctx: CondDensityContext, s_k: float) -> float:
    """Root of ``E_delta[t] = s_k``; the conditional log-likelihood is concave in delta."""
    f = lambda d: conditional_mean(d, ctx) - s_k  # noqa: E731
    delta = _solve_increasing(f, s_k, math.sqrt(ctx.sigma2))
    if abs(f(delta)) >= MLE_RTOL * s_k:
        raise NumericalFailureError("MLE stationarity residual above tolerance")
    return delta


def mle_objective(delta: float, ctx: CondDensityContext, s_k: float) -> float:
    """Conditional log-likelihood of ``delta`` at the observed ``s_k``."""
    return log_h(s_k, delta, ctx) - log_normalizer(delta, ctx)


def mle_delta(svd: SvdFactorization, k: int, rule, noise: NoiseModel,
              grid_size: int = DEFAULT_GRID_SIZE) -> float:
    ctx = build_context(svd, k, rule, noise, grid_size)
    return solve_mle(ctx, svd.s[k - 1])


def pve_denominator(pair: ThinnedPair) -> float:
    """Unbiased estimate ``||X2||_F^2 - n p sigma_c^2`` of ``||Theta||_F^2``."""
    return float(np.sum(pair.x2 * pair.x2)) - pair.x2.size * pair.sigma_c2


def mle_pve(pair: ThinnedPair, k: int, rule, delta_hat: float | None = None,
            grid_size: int = DEFAULT_GRID_SIZE) -> float | None:
    """Point estimate of PVE_k; None when the denominator estimate is <= 0."""
    denom = pve_denominator(pair)
    if denom <= 0:
        return None
    if delta_hat is None:
        svd1 = compute_svd(pair.x1)
        delta_hat = mle_delta(svd1, k, rule, pair.noise1, grid_size)
    return delta_hat * delta_hat / denom


@dataclass
class InferenceReport:
    k: int
    rule: str
    r_selected: int
    alphas: tuple[float, float]
    sample_pve: float
    p_value: float
    delta_interval: tuple[float, float]
    num_sq_interval: tuple[float, float]
    denom_interval: tuple[float, float]
    pve_interval: tuple[float, float]
    pve_interval_raw: tuple[float, float]
    pve_interval_degenerate: bool
    delta_mle: float | None = None
    pve_mle: float | None = None
    pve_mle_degenerate: bool = False
    truncation_set: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("alphas", "delta_interval", "num_sq_interval", "denom_interval",
                    "pve_interval", "pve_interval_raw"):
            out[key] = [None if not math.isfinite(v) else float(v) for v in out[key]]
        return out


def denominator_interval(pair: ThinnedPair, alpha2: float) -> tuple[float, float]:
    """1 - alpha2 interval for ||Theta||_F^2 from X2."""
    q_obs = float(np.sum(pair.x2 * pair.x2))
    return denom_ci(q_obs, pair.x2.size, pair.sigma_c2, alpha2)


def pve_interval(num_sq: tuple[float, float], denom: tuple[float, float]):
    """Combine numerator and denominator intervals.

    Returns (clamped, raw, degenerate). A zero denominator upper bound means
    no signal was detected; the interval is then [0, 1] and flagged.
    """
    lo_num, hi_num = num_sq
    lo_den, hi_den = denom
    if hi_den <= 0:
        return (0.0, 1.0), (math.nan, math.inf), True
    raw_lo = lo_num / hi_den
    raw_hi = hi_num / lo_den if lo_den > 0 else math.inf
    lo = min(max(raw_lo, 0.0), 1.0)
    hi = min(max(raw_hi, 0.0), 1.0)
    return (lo, hi), (raw_lo, raw_hi), False


def ci_pve(pair: ThinnedPair, k: int, rule, alpha1: float, alpha2: float,
           svd1: SvdFactorization | None = None, grid_size: int = DEFAULT_GRID_SIZE,
           ctx: CondDensityContext | None = None,
           denom: tuple[float, float] | None = None) -> dict:
    """Selective 1 - alpha1 - alpha2 interval for the PVE of X1's k-th component.

    ``denom`` is the interval from :func:`denominator_interval`; it does not
    depend on ``k`` so callers looping over indices can pass it in.
    """
    if svd1 is None:
        svd1 = compute_svd(pair.x1)
    if ctx is None:
        ctx = build_context(svd1, k, rule, pair.noise1, grid_size)
    delta_iv = invert_survival(ctx, svd1.s[k - 1], alpha1)
    num_sq = square_interval(delta_iv)
    den = denominator_interval(pair, alpha2) if denom is None else denom
    clamped, raw, degenerate = pve_interval(num_sq, den)
    return {
        "delta_interval": delta_iv,
        "num_sq_interval": num_sq,
        "denom_interval": den,
        "pve_interval": clamped,
        "pve_interval_raw": raw,
        "pve_interval_degenerate": degenerate,
    }


def infer_index(pair: ThinnedPair, k: int, rule, alpha1: float = 0.075, alpha2: float = 0.025,
                svd1: SvdFactorization | None = None, grid_size: int = DEFAULT_GRID_SIZE,
                with_mle: bool = True,
                denom: tuple[float, float] | None = None) -> InferenceReport:
    """Full report for index ``k``: p-value, intervals and MLEs, all on X1."""
    rule = as_rule(rule)
    if svd1 is None:
        svd1 = compute_svd(pair.x1)
    r = select_rank(svd1.s, rule)
    ctx = build_context(svd1, k, rule, pair.noise1, grid_size)
    s_k = svd1.s[k - 1]
    parts = ci_pve(pair, k, rule, alpha1, alpha2, svd1=svd1, ctx=ctx, denom=denom)
    report = InferenceReport(
        k=k,
        rule=rule.kind,
        r_selected=r,
        alphas=(alpha1, alpha2),
        sample_pve=sample_pve(svd1.s, k),
        p_value=survival_prob(0.0, ctx, s_k),
        truncation_set=ctx.trunc.to_list(),
        **parts,
    )
    if with_mle:
        delta_hat = solve_mle(ctx, s_k)
        report.delta_mle = delta_hat
        est = mle_pve(pair, k, rule, delta_hat=delta_hat)
        report.pve_mle = est
        report.pve_mle_degenerate = est is None
    return report


def analyze(x, noise: NoiseModel, rule="zg", alpha: float = 0.1, alpha_split: float = 0.75,
            c: float = 1.0, seed=None, grid_size: int = DEFAULT_GRID_SIZE):
    """Thin ``x``, select on X1 and report every selected index.

    Returns ``(pair, svd1, r, reports)``; an index whose computation fails is
    reported as ``{"k": k, "error": message}``.
    """
    x = as_data_matrix(x)
    rule = as_rule(rule)
    pair = thin(x, c, noise, seed)
    svd1 = compute_svd(pair.x1)
    r = select_rank(svd1.s, rule)
    alpha1, alpha2 = alpha_split * alpha, (1.0 - alpha_split) * alpha
    reports = []
    denom = denominator_interval(pair, alpha2)
    for k in range(1, r + 1):
        try:
            reports.append(infer_index(pair, k, rule, alpha1, alpha2, svd1=svd1,
                                       grid_size=grid_size, denom=denom))
        except (ArithmeticError, ValueError) as exc:
            reports.append({"k": k, "error": f"{type(exc).__name__}: {exc}"})
    return pair, svd1, r, reports
