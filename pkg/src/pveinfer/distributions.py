"""Noncentral chi-squared CDF and inversions, Marchenko-Pastur median,
and the median-singular-value noise estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .core import NoiseModel
from .errors import NumericalFailureError

# exp(-35) < 1e-15: Poisson mass allowed outside the summed window, per side.
_TAIL_EXPONENT = 35.0
_MAX_TERMS = 5_000_000


@dataclass(frozen=True)
class NoncentralChiSq:
    df: int
    lam: float

    def __post_init__(self):
        if int(self.df) != self.df or self.df < 1:
            raise ValueError(f"df must be a positive integer, got {self.df}")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError(f"noncentrality must be >= 0, got {self.lam}")

    def cdf(self, x: float) -> float:
        return ncchisq_cdf(x, self.df, self.lam)

    def ppf(self, q: float) -> float:
        return ncchisq_ppf(q, self.df, self.lam)


def _poisson_half_width(mu: float) -> float:
    """t with P(|N - mu| >= t) <= 2 exp(-35) for N ~ Poisson(mu).

    Bernstein's inequality gives exp(-t^2 / (2 (mu + t/3))) for the upper
    tail, which also dominates the lower tail bound exp(-t^2 / (2 mu)).
    """
    c = _TAIL_EXPONENT
    b = 2.0 * c / 3.0
    return 0.5 * (b + math.sqrt(b * b + 8.0 * c * mu))


def ncchisq_cdf(x: float, df: int, lam: float) -> float:
    """P(W <= x) for W ~ chi^2_df(lam), by the Poisson mixture of central CDFs.

    The mixture is truncated where each Poisson tail holds less than 1e-15
    (Bernstein bound), so the truncation error is below 2e-15 for every ``x``.
    """
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if lam < 0:
        raise ValueError(f"noncentrality must be >= 0, got {lam}")
    if x <= 0:
        return 0.0
    if not np.isfinite(x):
        return 1.0
    half_df = 0.5 * df
    if lam == 0:
        return float(special.gammainc(half_df, 0.5 * x))
    mu = 0.5 * lam
    half_width = _poisson_half_width(mu)
    lo = max(int(math.floor(mu - half_width)), 0)
    hi = int(math.ceil(mu + half_width))
    if hi - lo > _MAX_TERMS:
        raise NumericalFailureError(
            f"noncentral chi-squared series needs {hi - lo} terms (lam={lam})"
        )
    j = np.arange(lo, hi + 1, dtype=float)
    weights = np.exp(j * math.log(mu) - mu - special.gammaln(j + 1.0))
    terms = special.gammainc(half_df + j, 0.5 * x)
    return float(min(1.0, np.dot(weights, terms)))


def ncchisq_ppf(q: float, df: int, lam: float) -> float:
    """Inverse of :func:`ncchisq_cdf` in ``x``."""
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    mean = df + lam
    sd = math.sqrt(2.0 * (df + 2.0 * lam))
    hi = mean + 10.0 * sd
    for _ in range(200):
        if ncchisq_cdf(hi, df, lam) > q:
            break
        hi *= 2.0
    else:
        raise NumericalFailureError("could not bracket the chi-squared quantile")
    return optimize.brentq(
        lambda x: ncchisq_cdf(x, df, lam) - q, 0.0, hi, xtol=1e-13, rtol=1e-15, maxiter=500
    )


def _solve_noncentrality(z: float, df: int, target: float) -> float:
    """Smallest lam >= 0 with cdf(z; df, lam) = target, or 0 if none exists.

    The CDF is strictly decreasing in lam.
    """
    g = lambda lam: ncchisq_cdf(z, df, lam) - target
    if g(0.0) <= 0:
        return 0.0
    hi = z + 10.0 * math.sqrt(df)
    for _ in range(200):
        if g(hi) < 0:
            break
        hi *= 2.0
    else:
        raise NumericalFailureError("noncentrality bracket expansion failed")
    return optimize.brentq(g, 0.0, hi, xtol=1e-12 * max(1.0, hi), rtol=1e-15, maxiter=500)


def denom_ci(q_obs: float, df: int, sigma_c2: float, alpha2: float) -> tuple[float, float]:
    """Equal-tailed 1 - alpha2 interval for ||Theta||_F^2 from ||X2||_F^2.

    Uses ``q_obs / sigma_c2 ~ chi^2_df(||Theta||_F^2 / sigma_c2)``. Bounds with
    no nonnegative solution are clamped to zero.
    """
    if q_obs < 0:
        raise ValueError("q_obs must be nonnegative")
    if sigma_c2 <= 0:
        raise ValueError("sigma_c2 must be positive")
    if not 0 < alpha2 < 1:
        raise ValueError("alpha2 must lie in (0, 1)")
    z = q_obs / sigma_c2
    upper = _solve_noncentrality(z, df, 0.5 * alpha2)
    lower = _solve_noncentrality(z, df, 1.0 - 0.5 * alpha2)
    return lower * sigma_c2, upper * sigma_c2


def _mp_edges(beta: float) -> tuple[float, float]:
    rb = math.sqrt(beta)
    return (1.0 - rb) ** 2, (1.0 + rb) ** 2


def _mp_angle_density(theta: float, beta: float) -> float:
    # Density after x = a + (b - a)(1 - cos theta)/2; smooth on [0, pi] even at beta = 1.
    a, b = _mp_edges(beta)
    x = a + 0.5 * (b - a) * (1.0 - math.cos(theta))
    sin_t = math.sin(theta)
    if x <= 0.0:
        return 2.0 / math.pi
    return 2.0 * sin_t * sin_t / (math.pi * x)


def mp_cdf(x: float, beta: float) -> float:
    """CDF of the Marchenko-Pastur law with aspect ratio ``beta`` in (0, 1]."""
    a, b = _mp_edges(beta)
    if x <= a:
        return 0.0
    if x >= b:
        return 1.0
    theta = math.acos(1.0 - 2.0 * (x - a) / (b - a))
    val, _ = integrate.quad(_mp_angle_density, 0.0, theta, args=(beta,), epsabs=1e-14, epsrel=1e-13)
    return val


@lru_cache(maxsize=1024)
def mp_median(beta: float) -> float:
    """Median of the Marchenko-Pastur law with ratio ``beta = p/n`` (unit variance)."""
    if not 0 < beta <= 1:
        raise ValueError(f"aspect ratio must lie in (0, 1], got {beta}")
    a, b = _mp_edges(beta)

    def angle_cdf(theta):
        val, _ = integrate.quad(
            _mp_angle_density, 0.0, theta, args=(beta,), epsabs=1e-14, epsrel=1e-13
        )
        return val - 0.5

    theta = optimize.brentq(angle_cdf, 0.0, math.pi, xtol=1e-14, rtol=1e-15)
    return a + 0.5 * (b - a) * (1.0 - math.cos(theta))


def estimate_sigma2(s, n: int, p: int) -> NoiseModel:
    """Robust noise variance ``median(s)^2 / (n * mp_median(p / n))``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    s = np.asarray(s, dtype=float)
    med = float(np.median(s))
    sigma2 = med * med / (n * mp_median(p / n))
    return NoiseModel(sigma2=sigma2, source="estimated")
