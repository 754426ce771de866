"""Elbow rules on the singular values and the sets of imputed values of
one singular value under which an index stays selected."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DimensionError, StructureViolationError

RuleKind = Literal["derivative", "zg", "none"]

_BOUNDARY_RTOL = 1e-10
DEFAULT_GRID_SIZE = 256


@dataclass(frozen=True)
class SelectionRule:
    kind: RuleKind = "zg"

    def __post_init__(self):
        if self.kind not in ("derivative", "zg", "none"):
            raise ValueError(f"unknown selection rule {self.kind!r}")

    def select(self, s) -> int:
        return select_rank(s, self)


def as_rule(rule) -> SelectionRule:
    if isinstance(rule, SelectionRule):
        return rule
    return SelectionRule(rule)


@dataclass(frozen=True)
class TruncationSet:
    """Union of at most two disjoint closed intervals on [0, inf]."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        if len(ivs) > 2:
            raise StructureViolationError(f"{len(ivs)} intervals in truncation set")
        for lo, hi in ivs:
            if not (0 <= lo <= hi):
                raise ValueError(f"malformed interval [{lo}, {hi}]")
        for (_, hi0), (lo1, _) in zip(ivs, ivs[1:]):
            if not hi0 < lo1:
                raise ValueError("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def full(cls) -> "TruncationSet":
        return cls(((0.0, math.inf),))

    @classmethod
    def from_union(cls, intervals: Sequence[tuple[float, float]]) -> "TruncationSet":
        """Sort, drop empty pieces and merge overlaps."""
        pieces = sorted((lo, hi) for lo, hi in intervals if lo <= hi)
        merged: list[list[float]] = []
        for lo, hi in pieces:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        return cls(tuple((lo, hi) for lo, hi in merged))

    def contains(self, t: float) -> bool:
        return any(lo <= t <= hi for lo, hi in self.intervals)

    def clip(self, lower: float, upper: float) -> list[tuple[float, float]]:
        """Intersection with [lower, upper] as a list of positive-length pieces."""
        out = []
        for lo, hi in self.intervals:
            a, b = max(lo, lower), min(hi, upper)
            if b > a:
                out.append((a, b))
        return out

    def to_list(self) -> list[list[float | None]]:
        return [[lo, None if math.isinf(hi) else hi] for lo, hi in self.intervals]


def impute(s, k: int, t: float) -> np.ndarray:
    """Copy of ``s`` with the ``k``-th (1-based) entry replaced by ``t``."""
    out = np.array(s, dtype=float)
    out[k - 1] = t
    return out


def second_diff(lam, i: int) -> float:
    """``lam[i-1] - 2 lam[i] + lam[i+1]`` (1-based); -inf outside 2..p-1."""
    lam = np.asarray(lam, dtype=float)
    p = lam.size
    if not 2 <= i <= p - 1:
        return -math.inf
    return float(lam[i - 2] - 2.0 * lam[i - 1] + lam[i])


def _second_diffs(lam: np.ndarray) -> np.ndarray:
    # kappa_2, ..., kappa_{p-1} along the last axis
    return lam[..., :-2] - 2.0 * lam[..., 1:-1] + lam[..., 2:]


def derivative_rule(s) -> int:
    """Index before the largest discrete second derivative of the squared values."""
    lam = np.asarray(s, dtype=float) ** 2
    if lam.size < 3:
        raise DimensionError("the derivative rule needs p >= 3")
    return int(np.argmax(_second_diffs(lam))) + 1


def _zg_logliks(lam: np.ndarray) -> np.ndarray:
    """Profile log-likelihoods for every split; rows of ``lam`` are spectra.

    Returns an (m, p-1) array whose column ``j`` is the split after ``j+1``
    values. Zero pooled variance gives +inf.
    """
    lam = np.atleast_2d(lam)
    m, p = lam.shape
    dof = max(p - 2, 1)
    ss = np.empty((m, p - 1))
    for j in range(1, p):
        head, tail = lam[:, :j], lam[:, j:]
        ss[:, j - 1] = (
            ((head - head.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
            + ((tail - tail.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
        )
    var = ss / dof
    out = np.full_like(var, math.inf)
    ok = var > 0
    out[ok] = -0.5 * p * np.log(2.0 * math.pi * var[ok]) - 0.5 * dof
    return out


def zg_loglik(lam, k: int) -> float:
    """Two-group Gaussian log-likelihood of ``lam`` split after ``k`` values.

    Groups get their own means and share the pooled variance
    ``SS / (p - 2)`` (``SS`` for p = 2). A zero pooled variance returns +inf.
    """
    lam = np.asarray(lam, dtype=float)
    p = lam.size
    if not 1 <= k <= p - 1:
        raise IndexError(f"split k={k} outside 1..{p - 1}")
    return float(_zg_logliks(lam)[0, k - 1])


def _zg_rule_many(lam: np.ndarray) -> np.ndarray:
    return np.argmax(_zg_logliks(lam), axis=1) + 1


def zg_rule(s) -> int:
    """Number of leading squared singular values in the best two-group split."""
    lam = np.asarray(s, dtype=float) ** 2
    if lam.size < 2:
        raise DimensionError("the ZG rule needs p >= 2")
    return int(_zg_rule_many(lam[None, :])[0])


def select_rank(s, rule) -> int:
    rule = as_rule(rule)
    if rule.kind == "derivative":
        return derivative_rule(s)
    if rule.kind == "zg":
        return zg_rule(s)
    return int(np.asarray(s).size)


def truncation_set_derivative(s, k: int) -> TruncationSet:
    """Closed-form set of t with ``k <= derivative_rule(impute(s, k, t))``.

    Bounds are solved in t^2 and mapped back with a clamped square root.
    """
    s = np.asarray(s, dtype=float)
    p = s.size
    r = derivative_rule(s)
    if not 1 <= k <= r:
        raise ValueError(f"index k={k} was not selected (r={r})")
    if k == 1:
        return TruncationSet.full()

    lam = s * s
    L = lambda i: lam[i - 1]  # noqa: E731  1-based access
    kappa = {i: second_diff(lam, i) for i in range(2, p)}
    c1 = max((kappa[i] for i in range(2, k - 1)), default=-math.inf) if k >= 4 else -math.inf
    c2 = max((kappa[i] for i in range(k + 2, p)), default=-math.inf) if k <= p - 3 else -math.inf

    a_lo = max((L(k - 1) + 3 * L(k + 1) - L(k + 2)) / 3.0, c1 + 2 * L(k + 1) - L(k + 2))
    a_set = (a_lo, math.inf)
    if math.isfinite(c2):
        b_lo = 0.5 * (L(k - 1) + L(k + 1) - c2)
        b_hi = 2 * L(k - 1) - L(k - 2) + c2 if k >= 3 else math.inf
        b_set = (b_lo, b_hi)
    else:
        b_set = None

    if c1 > c2 or not math.isfinite(c2):
        pieces = [a_set]
    elif k >= 3 and L(k - 2) - 2 * L(k - 1) > -2 * L(k + 1) + L(k + 2):
        pieces = [b_set]
    else:
        pieces = [a_set, b_set]

    def root(u):
        return math.inf if math.isinf(u) else math.sqrt(max(u, 0.0))

    return TruncationSet.from_union([(root(lo), root(hi)) for lo, hi in pieces])


def _zg_indicator(s: np.ndarray, k: int, ts: np.ndarray) -> np.ndarray:
    lam = np.tile(s * s, (ts.size, 1))
    lam[:, k - 1] = ts * ts
    return _zg_rule_many(lam) >= k


def truncation_set_zg(s, k: int, grid_size: int = DEFAULT_GRID_SIZE) -> TruncationSet:
    """Numerical set of t in [s_{k+1}, s_{k-1}] keeping ``k <= zg_rule``.

    The indicator is scanned on a uniform grid (plus the observed value),
    true-runs become intervals and each interior boundary is bisected to
    1e-10 relative precision.
    """
    s = np.asarray(s, dtype=float)
    p = s.size
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    r = zg_rule(s)
    if not 1 <= k <= r:
        raise ValueError(f"index k={k} was not selected (r={r})")
    if k == 1:
        return TruncationSet.full()

    lower = s[k] if k < p else 0.0
    upper = s[k - 2]
    ts = np.union1d(np.linspace(lower, upper, grid_size), [s[k - 1]])
    inside = _zg_indicator(s, k, ts)

    # boundaries as (false_side, true_side) pairs, refined together
    edges = np.flatnonzero(np.diff(inside.astype(np.int8)))
    if edges.size:
        a = ts[edges].copy()
        b = ts[edges + 1].copy()
        a_in = inside[edges]
        f_side = np.where(a_in, b, a)
        t_side = np.where(a_in, a, b)
        for _ in range(200):
            width = np.abs(t_side - f_side)
            if np.all(width <= _BOUNDARY_RTOL * np.maximum(np.abs(t_side), 1e-300)):
                break
            mid = 0.5 * (f_side + t_side)
            ok = _zg_indicator(s, k, mid)
            t_side = np.where(ok, mid, t_side)
            f_side = np.where(ok, f_side, mid)
        refined = dict(zip(edges.tolist(), t_side.tolist()))
    else:
        refined = {}

    runs = []
    i = 0
    m = ts.size
    while i < m:
        if not inside[i]:
            i += 1
            continue
        j = i
        while j + 1 < m and inside[j + 1]:
            j += 1
        lo = ts[0] if i == 0 else refined[i - 1]
        hi = ts[-1] if j == m - 1 else refined[j]
        runs.append((lo, hi))
        i = j + 1
    if len(runs) > 2:
        raise StructureViolationError(
            f"ZG truncation set for k={k} has {len(runs)} disjoint pieces"
        )
    return TruncationSet.from_union(runs)


def truncation_set(s, k: int, rule, grid_size: int = DEFAULT_GRID_SIZE) -> TruncationSet:
    rule = as_rule(rule)
    if rule.kind == "derivative":
        return truncation_set_derivative(s, k)
    if rule.kind == "zg":
        return truncation_set_zg(s, k, grid_size)
    p = np.asarray(s).size
    if not 1 <= k <= p:
        raise IndexError(f"k={k} outside 1..{p}")
    return TruncationSet.full()
