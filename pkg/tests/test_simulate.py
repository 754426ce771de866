import math
from collections import Counter

import numpy as np
import pytest

from pveinfer import DimensionError
from pveinfer.simulate import (
    SimConfig,
    gen_theta,
    run_coverage,
    run_experiment,
    run_power,
    run_ratio,
    run_type1,
    theta_singular_values,
    worker_count,
)


def test_null_theta():
    assert not gen_theta(50, 10, 0, 1).any()


def test_alternative_theta_rank_and_values():
    theta = gen_theta(50, 10, 5, 3)
    s = np.linalg.svd(theta, compute_uv=False)
    assert np.linalg.matrix_rank(theta) == 5
    np.testing.assert_allclose(s[:5], theta_singular_values(50, 10, 5)[:5], rtol=1e-12)
    assert s[0] / s[4] == pytest.approx(5 ** 0.2)
    assert s[0] == pytest.approx(5 ** 0.2 * 500 ** 0.25)


def test_theta_rank_too_large():
    with pytest.raises(DimensionError):
        gen_theta(50, 10, 11, 0)


def test_config_validation():
    with pytest.raises(DimensionError):
        SimConfig(rank=12)
    with pytest.raises(ValueError):
        SimConfig(reps=0)
    with pytest.raises(ValueError):
        SimConfig.for_experiment("bogus")
    with pytest.raises(ValueError):
        run_experiment("bogus", SimConfig())


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("PVE_INFER_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("PVE_INFER_THREADS", "x")
    with pytest.raises(ValueError):
        worker_count()


SMALL = dict(n=20, p=6, rank=3, reps=12, seed=4)


@pytest.mark.parametrize("experiment", ["type1", "power", "coverage", "ratio"])
def test_reproducible(experiment):
    cfg = SimConfig.for_experiment(experiment, **SMALL, sigma_grid=(0.3,), alpha_grid=(0.2,))
    a = run_experiment(experiment, cfg, workers=1)
    b = run_experiment(experiment, cfg, workers=1)
    assert a.to_json() == b.to_json()
    assert a.rows_csv() == b.rows_csv()


def test_parallel_matches_serial():
    cfg = SimConfig.for_experiment("power", **SMALL, sigma_grid=(0.2, 0.6))
    assert run_power(cfg, workers=1).to_json() == run_power(cfg, workers=2).to_json()


def test_power_metrics_recount():
    cfg = SimConfig.for_experiment("power", **SMALL, sigma_grid=(0.2, 0.8))
    res = run_power(cfg, workers=1)
    for rec in res.summary:
        rows = [r for r in res.rows if r["sigma"] == rec["sigma"] and r["k"] == rec["k"]]
        assert rec["selected"] == len(rows)
        assert rec["selective_power"] == sum(bool(r.get("reject")) for r in rows) / len(rows)
        ranks = {r["rep"]: r["r"] for r in res.rows if r["sigma"] == rec["sigma"]}
        assert len(ranks) == cfg.reps
        assert rec["detection_probability"] == sum(v == cfg.rank for v in ranks.values()) / cfg.reps
        assert 0 <= rec["selective_power"] <= 1


def test_type1_summary_shape():
    cfg = SimConfig.for_experiment("type1", n=20, p=6, reps=30, seed=2)
    res = run_type1(cfg, workers=1)
    assert res.config.rank == 0
    counts = Counter(r["k"] for r in res.rows)
    assert counts[1] == 30
    for rec in res.summary:
        assert rec["selected"] == counts[rec["k"]]
        assert 0 <= rec["selective_ks_pvalue"] <= 1
    extra = res.extras["sigma=1.0"]
    assert extra["pooled_selective"]["count"] == len(res.rows)


def test_coverage_recount():
    cfg = SimConfig.for_experiment("coverage", **SMALL, sigma_grid=(0.2,), alpha_grid=(0.2, 0.6))
    res = run_coverage(cfg, workers=1)
    for rec in res.summary:
        rows = [r for r in res.rows if r["alpha"] == rec["alpha"] and r["k"] == rec["k"]]
        assert rec["covered"] == sum(bool(r.get("covered")) for r in rows)
        assert rec["coverage_se"] == pytest.approx(math.sqrt(rec["selective_coverage"] * (1 - rec["selective_coverage"]) / len(rows)))
        for r in rows:
            assert 0 <= r["lower"] <= r["upper"] <= 1


def test_coverage_se_halves_when_reps_quadruple():
    from pveinfer.simulate import binomial_se
    assert binomial_se(0.9, 400) == pytest.approx(binomial_se(0.9, 100) / 2)


def test_ratio_small_noise():
    cfg = SimConfig.for_experiment("ratio", reps=40, sigma_grid=(0.01,), seed=1)
    res = run_ratio(cfg, workers=1)
    assert max(r["k"] for r in res.rows) <= 5
    for rec in res.summary:
        assert abs(rec["median_log_ratio"]) < 0.02


def test_estimated_sigma_arm():
    cfg = SimConfig.for_experiment("power", **SMALL, sigma_grid=(0.3,), sigma_mode="estimated")
    res = run_power(cfg, workers=1)
    assert all("error" not in r for r in res.rows)
