"""Monte Carlo experiments: type-1 uniformity, detection and selective power,
selective coverage, and the sample-to-population PVE ratio.

Every replicate draws from its own stream keyed by ``(seed, sigma index,
replicate)``, and rows are sorted before aggregation, so serial and parallel
runs give identical results.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy import stats

from .core import NoiseModel, compute_svd, population_pve, sample_pve
from .density import CondDensityContext, survival_prob
from .distributions import estimate_sigma2
from .errors import DimensionError
from .inference import (
    denominator_interval,
    invert_survival,
    pve_denominator,
    pve_interval,
    solve_mle,
    square_interval,
    thin,
)
from .selection import DEFAULT_GRID_SIZE, TruncationSet, as_rule, select_rank

Experiment = Literal["type1", "power", "coverage", "ratio"]
EXPERIMENTS = ("type1", "power", "coverage", "ratio")

# Replicate counts and sigma grids used when the caller does not override them.
DEFAULT_REPS = {"type1": 10_000, "power": 1000, "coverage": 10_000, "ratio": 1000}
DEFAULT_SIGMAS = {
    "type1": (1.0,),
    "power": (0.1, 0.2, 0.4, 0.5, 0.7, 1.0),
    "coverage": (0.1,),
    "ratio": (0.01, 0.1, 0.2, 0.5, 1.0),
}
DEFAULT_ALPHA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)

_THETA_STREAM = 0x7E7A


@dataclass(frozen=True)
class SimConfig:
    n: int = 50
    p: int = 10
    rank: int = 5
    sigma_grid: tuple = (1.0,)
    rule: str = "zg"
    reps: int = 1000
    alpha: float = 0.1
    alpha_split: float = 0.75
    c: float = 1.0
    seed: int = 0
    sigma_mode: Literal["true", "estimated"] = "true"
    alpha_grid: tuple | None = None
    with_mle: bool = False
    grid_size: int = DEFAULT_GRID_SIZE

    def __post_init__(self):
        object.__setattr__(self, "sigma_grid", tuple(float(s) for s in self.sigma_grid))
        if self.alpha_grid is not None:
            object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        if self.n < self.p:
            raise DimensionError(f"n={self.n} < p={self.p}")
        if not 0 <= self.rank <= self.p:
            raise DimensionError(f"rank={self.rank} outside 0..{self.p}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.sigma_grid or min(self.sigma_grid) <= 0:
            raise ValueError("sigma_grid must hold positive values")
        for a in (self.alpha, *(self.alpha_grid or ())):
            if not 0 < a < 1:
                raise ValueError(f"alpha={a} outside (0, 1)")
        if not 0 < self.alpha_split < 1:
            raise ValueError("alpha_split must lie in (0, 1)")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.sigma_mode not in ("true", "estimated"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        as_rule(self.rule)

    @property
    def alphas(self) -> tuple:
        return self.alpha_grid if self.alpha_grid else (self.alpha,)

    @classmethod
    def for_experiment(cls, experiment: Experiment, **overrides) -> "SimConfig":
        """Defaults for ``experiment`` (null Theta for type1), then ``overrides``."""
        if experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {experiment!r}")
        base = {"reps": DEFAULT_REPS[experiment], "sigma_grid": DEFAULT_SIGMAS[experiment]}
        if experiment == "type1":
            base["rank"] = 0
        if experiment == "coverage":
            base["alpha_grid"] = DEFAULT_ALPHA_GRID
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class SimResult:
    experiment: str
    config: SimConfig
    summary: list[dict]
    rows: list[dict]
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": _jsonable(asdict(self.config)),
            "summary": _jsonable(self.summary),
            "extras": _jsonable(self.extras),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def rows_csv(self) -> str:
        buf = io.StringIO()
        cols = ROW_COLUMNS[self.experiment]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({c: _csv_cell(row.get(c)) for c in cols})
        return buf.getvalue()

    def records(self, **match) -> list[dict]:
        return [rec for rec in self.summary if all(rec.get(k) == v for k, v in match.items())]


ROW_COLUMNS = {
    "type1": ["sigma", "rep", "r", "k", "p_selective", "p_nonselective", "error"],
    "power": ["sigma", "rep", "r", "k", "p_selective", "reject", "error"],
    "coverage": ["sigma", "rep", "r", "k", "alpha", "lower", "upper", "truth", "covered",
                 "pve_mle", "error"],
    "ratio": ["sigma", "rep", "r", "k", "sample_pve", "population_pve", "ratio"],
}


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def theta_singular_values(n: int, p: int, rank: int) -> np.ndarray:
    """``(rank, rank-1, ..., 1, 0, ..., 0)^(1/5) * (n p)^(1/4)``."""
    if not 0 <= rank <= p:
        raise DimensionError(f"rank={rank} outside 0..{p}")
    vals = np.zeros(p)
    vals[:rank] = np.arange(rank, 0, -1, dtype=float) ** 0.2
    return vals * (n * p) ** 0.25


def gen_theta(n: int, p: int, rank: int, seed=None) -> np.ndarray:
    """Mean matrix with the singular vectors of an i.i.d. N(0, 1) draw."""
    if rank > p:
        raise DimensionError(f"rank={rank} exceeds p={p}")
    if rank < 0 or n < p:
        raise DimensionError(f"need 0 <= rank and n >= p, got rank={rank}, n={n}, p={p}")
    if rank == 0:
        return np.zeros((n, p))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    U, _, Vt = np.linalg.svd(rng.standard_normal((n, p)), full_matrices=False)
    return (U * theta_singular_values(n, p, rank)) @ Vt


def _theta_for(config: SimConfig) -> np.ndarray:
    ss = np.random.SeedSequence([config.seed, _THETA_STREAM])
    return gen_theta(config.n, config.p, config.rank, np.random.default_rng(ss))


def replicate_rng(seed: int, sigma_idx: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, sigma_idx, rep]))


def _noise(config: SimConfig, x: np.ndarray, sigma: float) -> NoiseModel:
    if config.sigma_mode == "estimated":
        return estimate_sigma2(compute_svd(x).s, *x.shape)
    return NoiseModel(sigma * sigma)


def _err(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def _rep_type1(config, theta, sigma, rng):
    x = theta + sigma * rng.standard_normal(theta.shape)
    noise = _noise(config, x, sigma)
    svd = compute_svd(x)
    r = select_rank(svd.s, config.rule)
    rows = []
    for k in range(1, r + 1):
        row = {"r": r, "k": k}
        try:
            ctx = CondDensityContext.from_singular_values(
                svd.s, k, svd.n, noise.sigma2, config.rule, config.grid_size)
            row["p_selective"] = survival_prob(0.0, ctx, svd.s[k - 1])
            naive = CondDensityContext.from_singular_values(
                svd.s, k, svd.n, noise.sigma2, trunc=TruncationSet.full())
            row["p_nonselective"] = survival_prob(0.0, naive, svd.s[k - 1])
        except (ArithmeticError, ValueError) as exc:
            row["error"] = _err(exc)
        rows.append(row)
    return rows


def _rep_power(config, theta, sigma, rng):
    x = theta + sigma * rng.standard_normal(theta.shape)
    noise = _noise(config, x, sigma)
    svd = compute_svd(x)
    r = select_rank(svd.s, config.rule)
    rows = []
    for k in range(1, r + 1):
        row = {"r": r, "k": k}
        try:
            ctx = CondDensityContext.from_singular_values(
                svd.s, k, svd.n, noise.sigma2, config.rule, config.grid_size)
            pv = survival_prob(0.0, ctx, svd.s[k - 1])
            row["p_selective"] = pv
            row["reject"] = pv <= config.alpha
        except (ArithmeticError, ValueError) as exc:
            row["error"] = _err(exc)
        rows.append(row)
    return rows


def _rep_coverage(config, theta, sigma, rng):
    x = theta + sigma * rng.standard_normal(theta.shape)
    noise = _noise(config, x, sigma)
    pair = thin(x, config.c, noise, rng)
    svd1 = compute_svd(pair.x1)
    r = select_rank(svd1.s, config.rule)
    split = config.alpha_split
    denoms = {}
    rows = []
    for k in range(1, r + 1):
        truth = population_pve(svd1.u(k), svd1.v(k), theta)
        try:
            ctx = CondDensityContext.from_singular_values(
                svd1.s, k, svd1.n, pair.sigma1_2, config.rule, config.grid_size)
            est = None
            if config.with_mle:
                den_hat = pve_denominator(pair)
                if den_hat > 0:
                    est = solve_mle(ctx, svd1.s[k - 1]) ** 2 / den_hat
        except (ArithmeticError, ValueError) as exc:
            rows.extend({"r": r, "k": k, "alpha": a, "truth": truth, "error": _err(exc)}
                        for a in config.alphas)
            continue
        for a in config.alphas:
            row = {"r": r, "k": k, "alpha": a, "truth": truth, "pve_mle": est}
            try:
                if a not in denoms:
                    denoms[a] = denominator_interval(pair, (1.0 - split) * a)
                num = square_interval(invert_survival(ctx, svd1.s[k - 1], split * a))
                (lo, hi), _, _ = pve_interval(num, denoms[a])
                row.update(lower=lo, upper=hi, covered=bool(lo <= truth <= hi))
            except (ArithmeticError, ValueError) as exc:
                row["error"] = _err(exc)
            rows.append(row)
    return rows


def _rep_ratio(config, theta, sigma, rng):
    x = theta + sigma * rng.standard_normal(theta.shape)
    svd = compute_svd(x)
    r = select_rank(svd.s, config.rule)
    rows = []
    for k in range(1, r + 1):
        spve = sample_pve(svd.s, k)
        ppve = population_pve(svd.u(k), svd.v(k), theta)
        ratio = spve / ppve if ppve > 0 else math.inf
        rows.append({"r": r, "k": k, "sample_pve": spve, "population_pve": ppve,
                     "ratio": ratio})
    return rows


_REPLICATE = {"type1": _rep_type1, "power": _rep_power, "coverage": _rep_coverage,
              "ratio": _rep_ratio}


def _run_chunk(experiment, config, theta, tasks):
    out = []
    fn = _REPLICATE[experiment]
    for sigma_idx, rep in tasks:
        sigma = config.sigma_grid[sigma_idx]
        for row in fn(config, theta, sigma, replicate_rng(config.seed, sigma_idx, rep)):
            out.append({"sigma": sigma, "rep": rep, **row})
    return out


def worker_count() -> int:
    """Process count: ``PVE_INFER_THREADS`` if set, capped by the CPU count."""
    cpus = os.cpu_count() or 1
    env = os.environ.get("PVE_INFER_THREADS")
    if env:
        try:
            want = int(env)
        except ValueError:
            raise ValueError(f"PVE_INFER_THREADS must be an integer, got {env!r}") from None
        return max(1, min(want, cpus))
    return cpus


def _collect(experiment: str, config: SimConfig, workers: int | None = None) -> list[dict]:
    theta = _theta_for(config)
    tasks = [(i, rep) for i in range(len(config.sigma_grid)) for rep in range(config.reps)]
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(tasks) < 2:
        rows = _run_chunk(experiment, config, theta, tasks)
    else:
        chunks = [tasks[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [experiment] * workers, [config] * workers,
                             [theta] * workers, chunks)
            rows = [row for part in parts for row in part]
    rows.sort(key=lambda row: (row["sigma"], row["rep"], row["k"], row.get("alpha", 0.0)))
    return rows


def binomial_se(prop: float, count: int) -> float:
    return math.sqrt(prop * (1.0 - prop) / count) if count else math.nan


def _ks_uniform(values) -> dict:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {"count": 0, "ks_stat": None, "ks_pvalue": None}
    res = stats.kstest(values, "uniform")
    return {"count": int(values.size), "ks_stat": float(res.statistic),
            "ks_pvalue": float(res.pvalue)}


def _by(rows, *keys):
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    return dict(sorted(groups.items()))


def _ok(rows, col):
    return [row for row in rows if "error" not in row and row.get(col) is not None]


def run_type1(config: SimConfig, workers: int | None = None) -> SimResult:
    """Selective and non-selective p-values under the global null."""
    config = SimConfig(**{**asdict(config), "rank": 0})
    rows = _collect("type1", config, workers)
    summary = []
    for (sigma, k), grp in _by(rows, "sigma", "k").items():
        good = _ok(grp, "p_selective")
        sel = [row["p_selective"] for row in good]
        naive = [row["p_nonselective"] for row in good]
        rec = {"sigma": sigma, "k": k, "selected": len(grp), "errors": len(grp) - len(good)}
        rec.update({f"selective_{key}": v for key, v in _ks_uniform(sel).items()})
        rec.update({f"nonselective_{key}": v for key, v in _ks_uniform(naive).items()})
        rec["nonselective_mean"] = float(np.mean(naive)) if naive else None
        summary.append(rec)
    extras = {}
    for (sigma,), grp in _by(rows, "sigma").items():
        good = _ok(grp, "p_selective")
        at_r = [row["p_nonselective"] for row in good if row["k"] == row["r"]]
        mean = float(np.mean(at_r)) if at_r else None
        z = None
        if len(at_r) > 1:
            sd = float(np.std(at_r, ddof=1))
            z = (mean - 0.5) / (sd / math.sqrt(len(at_r))) if sd > 0 else None
        extras[f"sigma={sigma!r}"] = {
            "pooled_selective": _ks_uniform([row["p_selective"] for row in good]),
            "nonselective_at_selected_r": {"count": len(at_r), "mean": mean, "z_vs_half": z},
        }
    return SimResult("type1", config, summary, rows, extras)


def run_power(config: SimConfig, workers: int | None = None) -> SimResult:
    """Detection probability and selective power at ``config.alpha``."""
    rows = _collect("power", config, workers)
    summary = []
    detection = {}
    for (sigma,), grp in _by(rows, "sigma").items():
        ranks = {row["rep"]: row["r"] for row in grp}
        hits = sum(1 for r in ranks.values() if r == config.rank)
        detection[sigma] = hits / config.reps
    for (sigma, k), grp in _by(rows, "sigma", "k").items():
        good = _ok(grp, "reject")
        rejects = sum(1 for row in good if row["reject"])
        power = rejects / len(grp)
        summary.append({
            "sigma": sigma, "k": k, "selected": len(grp), "errors": len(grp) - len(good),
            "rejections": rejects, "selective_power": power,
            "selective_power_se": binomial_se(power, len(grp)),
            "detection_probability": detection[sigma],
            "detection_se": binomial_se(detection[sigma], config.reps),
        })
    extras = {"detection_probability": {repr(s): d for s, d in detection.items()}}
    return SimResult("power", config, summary, rows, extras)


def run_coverage(config: SimConfig, workers: int | None = None) -> SimResult:
    """Selective coverage of the PVE interval for every (alpha, k)."""
    rows = _collect("coverage", config, workers)
    summary = []
    for (sigma, alpha, k), grp in _by(rows, "sigma", "alpha", "k").items():
        good = _ok(grp, "covered")
        hits = sum(1 for row in good if row["covered"])
        cov = hits / len(grp)
        rec = {
            "sigma": sigma, "alpha": alpha, "k": k, "selected": len(grp),
            "errors": len(grp) - len(good), "covered": hits, "selective_coverage": cov,
            "coverage_se": binomial_se(cov, len(grp)), "nominal": 1.0 - alpha,
            "median_lower": float(np.median([row["lower"] for row in good])) if good else None,
            "median_upper": float(np.median([row["upper"] for row in good])) if good else None,
            "median_truth": float(np.median([row["truth"] for row in grp])),
        }
        mle = [row["pve_mle"] for row in grp if row.get("pve_mle") is not None]
        if config.with_mle:
            rec["median_pve_mle"] = float(np.median(mle)) if mle else None
        summary.append(rec)
    return SimResult("coverage", config, summary, rows)


def run_ratio(config: SimConfig, workers: int | None = None) -> SimResult:
    """Median log of sample over population PVE for every selected (sigma, k)."""
    rows = _collect("ratio", config, workers)
    summary = []
    for (sigma, k), grp in _by(rows, "sigma", "k").items():
        med = float(np.median([row["ratio"] for row in grp]))
        summary.append({"sigma": sigma, "k": k, "selected": len(grp),
                        "median_ratio": med, "median_log_ratio": math.log(med)})
    return SimResult("ratio", config, summary, rows)


RUNNERS = {"type1": run_type1, "power": run_power, "coverage": run_coverage, "ratio": run_ratio}


def run_experiment(experiment: str, config: SimConfig, workers: int | None = None) -> SimResult:
    try:
        runner = RUNNERS[experiment]
    except KeyError:
        raise ValueError(
            f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}"
        ) from None
    return runner(config, workers)
