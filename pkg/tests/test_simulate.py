import json
import math

import numpy as np
import pytest

from dflasso.model import CovarianceSpec
from dflasso.simulate import (ExperimentConfig, csv_header, field_values, fig1_config, fig2_config,
                              read_records_csv, resolve_threads, run_experiment, run_replication, summarize,
                              summarize_experiment, write_records_csv)


def small_config(**kw):
    base = dict(n=60, p=80, s0=3, R=6, base_seed=3)
    return ExperimentConfig(**(base | kw))


def test_single_replication_deterministic():
    cfg = small_config(R=1)
    a, b = run_experiment(cfg)[0], run_experiment(cfg)[0]
    assert a.theta_hat == b.theta_hat and a.pivot == b.pivot and a.shat == b.shat
    assert a.seed == 3 and not a.error


def test_record_contents():
    cfg = small_config()
    recs = run_experiment(cfg)
    assert [r.replicate for r in recs] == list(range(6))
    assert [r.seed for r in recs] == [3 + r for r in range(6)]
    for r in recs:
        assert set(r.pivot) == {"ldpe_df_zero", "ldpe_df_shat", "plugin_jm_zero", "plugin_jm_shat", "zz_zero",
                                "zz_shat"}
        assert all(np.isfinite(v) for v in r.pivot.values())
        assert 0 <= r.shat < cfg.n
        assert {"lasso", "score", "total"} <= set(r.timings)


def test_replication_independent_of_batch():
    cfg = small_config()
    recs = run_experiment(cfg)
    assert run_replication(cfg, 4).pivot == recs[4].pivot


def test_nonunique_recorded_per_row():
    cfg = small_config(sigma=0.0, lambda_rule=0.0, n=20, p=40, R=3)
    recs = run_experiment(cfg)
    assert len(recs) == 3
    assert all("NonUniqueSolutionError" in r.error for r in recs)
    assert all(not r.pivot for r in recs)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(R=0)
    with pytest.raises(ValueError):
        small_config(s0=100)
    with pytest.raises(ValueError):
        small_config(n=1)
    with pytest.raises(ValueError):
        small_config(variants=("estimated_score",))
    with pytest.raises(ValueError):
        small_config(a0_rule="canonical")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"n": 10, "p": 10, "s0": 1, "bogus": 1})


def test_config_json_round_trip():
    cfg = fig2_config(0.1)
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.to_dict() == cfg.to_dict()


def test_summarize_constant_and_symmetric():
    s = summarize(np.full(10, 2.5))
    assert s["sd"] == 0.0 and s["p_value"] == 0.0 and s["degenerate"]
    s = summarize(np.array([-1.0, 1.0]))
    assert s["mean"] == 0.0 and s["t_stat"] == 0.0 and s["p_value"] == pytest.approx(1.0)
    assert s["quartiles"][2] == 0.0
    with pytest.raises(ValueError):
        summarize(np.array([np.nan, np.nan]))


def test_summarize_matches_direct_t_test(rng):
    x = rng.standard_normal(50) + 0.3
    s = summarize(x)
    t = x.mean() / (x.std(ddof=1) / np.sqrt(50))
    assert s["t_stat"] == pytest.approx(t, rel=1e-12)
    from scipy import stats
    assert s["p_value"] == pytest.approx(2 * stats.t.sf(abs(t), 49), rel=1e-10)


def test_summarize_p_values_calibrated():
    rng = np.random.default_rng(99)
    ok = sum(0.01 <= summarize(rng.standard_normal(2000))["p_value"] <= 0.99 for _ in range(100))
    assert ok >= 97


def test_fig1_presets():
    full = fig1_config(20, 1.0)
    assert (full.n, full.p, full.s0, full.R) == (4000, 6000, 20, 200)
    assert full.cov.kind == "identity" and full.a0_rule == "sgn-beta-normalized"
    # 1.01 sqrt(2 log(2400) / 4000)
    assert full.lam() == pytest.approx(0.0630072, abs=1e-6)
    desk = fig1_config(120, 0.1)
    assert (desk.n, desk.p, desk.s0) == (400, 600, 12)
    assert [fig1_config(s, 0.1).s0 for s in (20, 40, 80, 120, 240)] == [2, 4, 8, 12, 24]
    with pytest.raises(ValueError):
        fig1_config(20, 1.5)


def test_fig2_presets():
    full = fig2_config(1.0)
    assert full.s0 == 120 and full.cov.c == pytest.approx(0.07)
    desk = fig2_config(0.1)
    assert desk.s0 == 12 and desk.cov.c == pytest.approx(0.2214, abs=1e-4)
    assert desk.cov.c * np.sqrt(12) == pytest.approx(0.07 * np.sqrt(120), rel=1e-12)
    # the nontrivial eigenvalues of the inverse are 1 + c (s_j +- ||s||), and 1 +- c ||s|| for j outside S
    c = desk.cov.c
    for sj in (1.0, -1.0):
        s = np.zeros(desk.p)
        s[:12] = 1.0
        s[desk.cov.j] = sj
        w = np.linalg.eigvalsh(CovarianceSpec.rank1inv(desk.p, desk.cov.j, c, s).dense_inv())
        assert w.min() == pytest.approx(1 + c * (sj - np.sqrt(12)), abs=1e-10)
        assert w.max() == pytest.approx(1 + c * (sj + np.sqrt(12)), abs=1e-10)
        assert w.min() > 0
    s = np.zeros(desk.p)
    s[:12] = 1.0
    w = np.linalg.eigvalsh(CovarianceSpec.rank1inv(desk.p, desk.p - 1, c, s).dense_inv())
    assert w.min() == pytest.approx(1 - 0.07 * np.sqrt(120), abs=1e-10)


def test_csv_header_order():
    cfg = small_config(variants=("ldpe_df",))
    h = csv_header(cfg)
    assert h[:8] == ["replicate", "seed", "shat", "theta_true", "theta_hat_ldpe_df_zero", "pivot_ldpe_df_zero",
                     "theta_hat_ldpe_df_shat", "pivot_ldpe_df_shat"]
    assert h[-1] == "error"


def test_csv_round_trip(tmp_path):
    cfg = small_config(R=8)
    recs = run_experiment(cfg)
    path = tmp_path / "r.csv"
    write_records_csv(recs, cfg, path)
    rows = read_records_csv(path)
    assert len(rows) == 8
    for col in ("pivot_ldpe_df_shat", "theta_hat_zz_zero", "shat"):
        a = summarize(recs, col)
        b = summarize(np.array([r[col] for r in rows]))
        for key in ("mean", "sd", "t_stat", "p_value"):
            assert abs(a[key] - b[key]) <= 1e-12 * max(1.0, abs(a[key]))


def test_threads_give_identical_csv(tmp_path):
    cfg = small_config(R=8)
    write_records_csv(run_experiment(cfg, threads=1), cfg, tmp_path / "a.csv")
    write_records_csv(run_experiment(cfg, threads=3), cfg, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("DEBIAS_LASSO_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("DEBIAS_LASSO_THREADS")
    assert resolve_threads(None) == 1


def test_estimated_score_experiment():
    cfg = ExperimentConfig(n=80, p=100, s0=3, score="estimated", a0_rule="canonical", a0_index=0,
                           nu_rules=("shat",), R=3)
    recs = run_experiment(cfg)
    for r in recs:
        assert not r.error
        assert set(r.pivot) == {"estimated_score_shat"}
        assert np.isfinite(r.sigma_hat) and np.isfinite(r.inner_zz)


def test_summarize_experiment_keys():
    cfg = small_config()
    s = summarize_experiment(cfg, run_experiment(cfg))
    assert s["R"] == 6 and s["errors"] == 0
    assert "mean_pivot_zero" in s and "mean_pivot_shat" in s
    assert s["mean_pivot_zero"] == s["mean_pivot_ldpe_df_zero"]
    assert 0 <= s["columns"]["ldpe_df_shat"]["coverage"] <= 1
    assert math.isfinite(s["mean_shat"])


@pytest.mark.slow
@pytest.mark.parametrize("name", ["fig1_s24", "fig1_s4", "fig2"])
def test_bias_ordering(runs, name):
    _, recs, _ = runs.get(name)
    pred = np.nanmean(field_values(recs, "pred_bias"))
    z = summarize(recs, "pivot_ldpe_df_zero")["mean"]
    s = summarize(recs, "pivot_ldpe_df_shat")["mean"]
    if pred > 0.3:
        assert z < s


@pytest.mark.slow
@pytest.mark.parametrize("name", ["fig1_s24", "fig1_s4", "fig2", "unknown_sigma"])
def test_adjusted_pivot_calibrated(runs, name):
    cfg, recs, _ = runs.get(name)
    v = cfg.variants[0]
    s = summarize(recs, f"pivot_{v}_shat")
    assert abs(s["mean"]) <= 3 / np.sqrt(cfg.R)
    assert 0.85 <= s["sd"] <= 1.15
