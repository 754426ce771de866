"""Truncated, tilted conditional density of one singular value.

For fixed ``k`` the density of ``s_k`` given everything else is proportional
to ``h(t; delta)`` restricted to the truncation set and to the ordering
interval ``[s_{k+1}, s_{k-1}]``. On that interval ``log h`` is strictly
concave, which the quadrature exploits: the maximum is found exactly and
panel breakpoints are placed on the scale of the peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DegenerateDensityError, NumericalFailureError
from .selection import DEFAULT_GRID_SIZE, TruncationSet, as_rule, truncation_set

_GL_X, _GL_W = np.polynomial.legendre.leggauss(15)
_PANEL_RTOL = 1e-10
_MAX_LEVELS = 60
_TAIL_NATS = 50.0


@dataclass(frozen=True)
class CondDensityContext:
    """Everything the density of ``s_k`` is conditioned on.

    ``lower`` and ``upper`` are ``s_{k+1}`` (0 for k = p) and ``s_{k-1}``
    (inf for k = 1). ``sigma2`` is the noise variance of the matrix whose
    singular values these are.
    """

    k: int
    s_minus_k: np.ndarray
    n: int
    p: int
    sigma2: float
    trunc: TruncationSet
    lower: float
    upper: float
    pieces: tuple = field(init=False, repr=False)
    _sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s_minus_k = np.asarray(self.s_minus_k, dtype=float)
        object.__setattr__(self, "s_minus_k", s_minus_k)
        object.__setattr__(self, "_sq", s_minus_k * s_minus_k)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if not self.lower < self.upper:
            raise DegenerateDensityError(
                f"ordering interval [{self.lower}, {self.upper}] has no interior"
            )
        pieces = tuple(self.trunc.clip(self.lower, self.upper))
        if not pieces:
            raise DegenerateDensityError("truncation set misses the ordering interval")
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def from_singular_values(
        cls, s, k: int, n: int, sigma2: float, rule="none", grid_size: int = DEFAULT_GRID_SIZE,
        trunc: TruncationSet | None = None,
    ) -> "CondDensityContext":
        s = np.asarray(s, dtype=float)
        p = s.size
        if not 1 <= k <= p:
            raise IndexError(f"k={k} outside 1..{p}")
        if trunc is None:
            trunc = truncation_set(s, k, as_rule(rule), grid_size)
        return cls(
            k=k,
            s_minus_k=np.delete(s, k - 1),
            n=n,
            p=p,
            sigma2=float(sigma2),
            trunc=trunc,
            lower=float(s[k]) if k < p else 0.0,
            upper=float(s[k - 2]) if k > 1 else math.inf,
        )

    @property
    def domain_lower(self) -> float:
        return self.pieces[0][0]

    @property
    def domain_upper(self) -> float:
        return self.pieces[-1][1]


def log_h(t, delta: float, ctx: CondDensityContext):
    """``log h(t; delta)``; -inf where a factor of ``h`` vanishes."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    with np.errstate(divide="ignore"):
        out = (-0.5 * t * t + t * delta) / ctx.sigma2
        if ctx.n > ctx.p:
            out = out + (ctx.n - ctx.p) * np.log(t)
        if ctx._sq.size:
            out = out + np.log(np.abs(t[:, None] ** 2 - ctx._sq[None, :])).sum(axis=1)
    return float(out[0]) if scalar else out


def _slope(t: float, delta: float, ctx: CondDensityContext) -> float:
    val = (delta - t) / ctx.sigma2
    if ctx.n > ctx.p:
        val += (ctx.n - ctx.p) / t
    if ctx._sq.size:
        val += float(np.sum(2.0 * t / (t * t - ctx._sq)))
    return val


def _curvature(t: float, ctx: CondDensityContext) -> float:
    val = -1.0 / ctx.sigma2
    if ctx.n > ctx.p:
        val -= (ctx.n - ctx.p) / (t * t)
    if ctx._sq.size:
        d = t * t - ctx._sq
        val -= float(np.sum(2.0 * (t * t + ctx._sq) / (d * d)))
    return val


def _mode(delta: float, ctx: CondDensityContext) -> float:
    """Maximiser of ``log h`` over the ordering interval (concave there)."""
    lo, hi = ctx.lower, ctx.upper
    scale = math.sqrt(ctx.sigma2)
    eps = 1e-13 * max(1.0, abs(lo), abs(hi) if math.isfinite(hi) else abs(lo), scale)
    a = lo + eps
    g_a = _slope(a, delta, ctx)
    if g_a <= 0:
        return lo
    if math.isfinite(hi):
        b = hi - eps
        if b <= a:
            return 0.5 * (lo + hi)
        if _slope(b, delta, ctx) >= 0:
            return hi
    else:
        step = max(scale, abs(delta), lo, 1.0)
        b = max(lo, delta) + step
        for _ in range(200):
            if _slope(b, delta, ctx) < 0:
                break
            step *= 2.0
            b = max(lo, delta) + step
        else:
            raise NumericalFailureError("could not bracket the density mode")
    return optimize.brentq(_slope, a, b, args=(delta, ctx), xtol=1e-14 * max(1.0, b), maxiter=200)


def _breakpoints(a: float, b: float, mode: float, delta: float, ctx: CondDensityContext) -> list:
    m = min(max(mode, a), b)
    g = 0.0 if a < mode < b else _slope(min(max(m, a + 1e-12 * (b - a)), b - 1e-12 * (b - a)), delta, ctx)
    curv = -_curvature(min(max(m, a + 1e-12 * (b - a)), b - 1e-12 * (b - a)), ctx)
    denom = math.sqrt(max(curv, 0.0) + g * g)
    width = b - a
    w = width if denom == 0 or not math.isfinite(denom) else min(width, 1.0 / denom)
    w = max(w, 1e-12 * width)
    pts = {a, b, m}
    step = w
    while step < width:
        for x in (m - step, m + step):
            if a < x < b:
                pts.add(x)
        step *= 2.0
    return sorted(pts)


def _tail_cap(start: float, mode: float, delta: float, ctx: CondDensityContext, top: float) -> float:
    """First point beyond the mode (by doubling) where log h < top - 50."""
    curv = -_curvature(max(mode, start), ctx)
    step = 1.0 / math.sqrt(curv) if curv > 0 else math.sqrt(ctx.sigma2)
    base = max(mode, start)
    for _ in range(400):
        t = base + step
        if log_h(t, delta, ctx) < top - _TAIL_NATS:
            return t
        step *= 2.0
    raise NumericalFailureError("could not cap the upper tail of the density")


@dataclass
class _Masses:
    below: float
    above: float
    first_below: float
    first_above: float
    shift: float

    @property
    def total(self) -> float:
        return self.below + self.above

    @property
    def first(self) -> float:
        return self.first_below + self.first_above


def _integrate(delta: float, ctx: CondDensityContext, split: float | None = None) -> _Masses:
    """Adaptive Gauss-Legendre masses of ``h * exp(-shift)`` below/above ``split``."""
    mode = _mode(delta, ctx)
    pieces = []
    for a, b in ctx.pieces:
        pieces.append([a, b])
    # shift = max of log h over the (capped) domain
    tops = [log_h(min(max(mode, a), b), delta, ctx) for a, b in pieces if math.isfinite(b)]
    if math.isinf(pieces[-1][1]):
        a = pieces[-1][0]
        tops.append(log_h(max(mode, a), delta, ctx))
    top = max(tops)
    if not math.isfinite(top):
        raise DegenerateDensityError("log-density is -inf on the whole domain")
    if math.isinf(pieces[-1][1]):
        pieces[-1][1] = _tail_cap(pieces[-1][0], mode, delta, ctx, top)

    edges = []
    for a, b in pieces:
        pts = _breakpoints(a, b, mode, delta, ctx)
        if split is not None and a < split < b:
            pts = sorted(set(pts) | {split})
        edges.extend(zip(pts[:-1], pts[1:]))
    lo = np.array([e[0] for e in edges])
    hi = np.array([e[1] for e in edges])

    below = above = first_below = first_above = 0.0
    for _ in range(_MAX_LEVELS):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        q = 0.5 * half
        nodes = np.concatenate(
            [mid[:, None] + half[:, None] * _GL_X, (mid - q)[:, None] + q[:, None] * _GL_X,
             (mid + q)[:, None] + q[:, None] * _GL_X], axis=1,
        )
        vals = np.exp(log_h(nodes.ravel(), delta, ctx) - top).reshape(nodes.shape)
        tv = vals * nodes
        m = _GL_X.size
        coarse = half * (vals[:, :m] @ _GL_W)
        fine = q * (vals[:, m:2 * m] @ _GL_W + vals[:, 2 * m:] @ _GL_W)
        fine1 = q * (tv[:, m:2 * m] @ _GL_W + tv[:, 2 * m:] @ _GL_W)
        total = below + above + fine.sum()
        if not (total > 0 and math.isfinite(total)):
            raise DegenerateDensityError("conditional density mass underflowed")
        done = (np.abs(coarse - fine) <= _PANEL_RTOL * total) | (half <= 1e-15 * np.maximum(np.abs(mid), 1e-300))
        is_above = lo >= split if split is not None else np.ones_like(done)
        sel = done & is_above
        above += float(fine[sel].sum())
        first_above += float(fine1[sel].sum())
        sel = done & ~is_above
        below += float(fine[sel].sum())
        first_below += float(fine1[sel].sum())
        if done.all():
            return _Masses(below, above, first_below, first_above, top)
        keep = ~done
        lo, hi, mid = lo[keep], hi[keep], mid[keep]
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
    raise NumericalFailureError("adaptive quadrature did not converge")


def survival_prob(delta: float, ctx: CondDensityContext, s_k_obs: float) -> float:
    """Conditional probability that ``s_k`` exceeds its observed value."""
    if s_k_obs <= ctx.domain_lower:
        return 1.0
    if s_k_obs >= ctx.domain_upper:
        return 0.0
    masses = _integrate(delta, ctx, split=s_k_obs)
    return min(1.0, max(0.0, masses.above / masses.total))


def conditional_mean(delta: float, ctx: CondDensityContext) -> float:
    masses = _integrate(delta, ctx)
    return masses.first / masses.total


def log_normalizer(delta: float, ctx: CondDensityContext) -> float:
    """``log`` of the integral of ``h`` over the effective domain."""
    masses = _integrate(delta, ctx)
    return masses.shift + math.log(masses.total)
