import json
import re
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from dflasso.cli import main
from dflasso.debias import debias_estimated_score
from dflasso.lasso import lambda_default, scaled_lasso
from dflasso.model import BetaSpec, CovarianceSpec, generate_problem
from dflasso.score import estimated_score


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_data(tmp_path, X, y, tag=""):
    xp, yp = tmp_path / f"X{tag}.csv", tmp_path / f"y{tag}.csv"
    np.savetxt(xp, X, delimiter=",", fmt="%.17g")
    np.savetxt(yp, y, delimiter=",", fmt="%.17g")
    return xp, yp


@pytest.fixture(scope="module")
def fig1_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig1")
    assert main(["fig1", "--s0", "240", "--scale", "0.1", "--out", str(out), "--threads", "2"]) == 0
    return out


def test_fig1_writes_contract_files(fig1_out):
    names = sorted(p.name for p in fig1_out.iterdir())
    assert "records.csv" in names and "summary.json" in names and "box.svg" in names
    assert "config.json" in names
    hists = [n for n in names if n.startswith("hist_") and n.endswith(".svg")]
    assert sorted(hists) == sorted(f"hist_{v}_{nu}.svg" for v in ("ldpe_df", "plugin_jm", "zz")
                                   for nu in ("zero", "shat"))


def test_fig1_summary_bias_ordering(fig1_out):
    s = json.loads((fig1_out / "summary.json").read_text())
    assert s["mean_pivot_zero"] < s["mean_pivot_shat"]
    assert s["R"] == 200 and s["errors"] == 0


def test_svg_self_contained(fig1_out):
    for svg in fig1_out.glob("*.svg"):
        text = svg.read_text()
        assert text.lstrip().startswith("<?xml")
        for ref in re.findall(r'(?:xlink:)?href="([^"]*)"', text):
            assert ref.startswith("#"), ref
        assert "<image" not in text and "@import" not in text


def test_csv_threads_and_svg_deterministic(tmp_path, fig1_out):
    out = tmp_path / "again"
    assert main(["fig1", "--s0", "240", "--scale", "0.1", "--out", str(out), "--threads", "1"]) == 0
    for name in ["records.csv", "summary.json"] + [p.name for p in fig1_out.glob("*.svg")]:
        assert (out / name).read_bytes() == (fig1_out / name).read_bytes(), name


def test_format_csv_only(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "fig1", "--s0", "40", "--R", "5", "--format", "csv", "--out", tmp_path)
    assert code == 0
    data = sorted(p.name for p in tmp_path.iterdir() if p.name != "config.json")
    assert data == ["records.csv"]
    assert json.loads(out)["replications"] == 5


def test_fig2_writes_boxplot(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "fig2", "--scale", "0.1", "--R", "10", "--format", "svg", "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "box.svg").exists()
    assert (tmp_path / "hist_ldpe_df_zero.svg").exists() and (tmp_path / "hist_ldpe_df_shat.svg").exists()


def test_simulate_from_config(tmp_path, capsys):
    cfg = {"n": 60, "p": 80, "s0": 3, "R": 4, "variants": ["ldpe_df"], "scale_tag": "tiny"}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, _ = run_cli(capsys, "simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "o")
    assert code == 0
    header = (tmp_path / "o" / "records.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["replicate", "seed", "shat", "theta_true", "theta_hat_ldpe_df_zero", "pivot_ldpe_df_zero"]


def test_simulate_partial_errors_exit_zero(tmp_path, capsys):
    cfg = {"n": 20, "p": 40, "s0": 2, "R": 2, "sigma": 0.0, "lambda_rule": 0.0}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, _ = run_cli(capsys, "simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "o",
                           "--format", "csv")
    assert code == 0 and json.loads(out)["errors"] == 2
    assert "NonUniqueSolutionError" in (tmp_path / "o" / "records.csv").read_text()


def test_threads_env_var(tmp_path, capsys, monkeypatch):
    args = ["fig1", "--s0", "40", "--R", "6", "--format", "csv"]
    monkeypatch.setenv("DEBIAS_LASSO_THREADS", "2")
    assert run_cli(capsys, *args, "--out", tmp_path / "a")[0] == 0
    monkeypatch.delenv("DEBIAS_LASSO_THREADS")
    assert run_cli(capsys, *args, "--out", tmp_path / "b")[0] == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()


# -- debias on user data ----------------------------------------------------------------


def test_debias_zero_noise(tmp_path, capsys):
    rng = np.random.default_rng(5)
    n, p = 50, 10
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:3] = [1.0, -2.0, 0.5]
    xp, yp = write_data(tmp_path, X, X @ beta)
    (tmp_path / "cov.json").write_text(json.dumps(CovarianceSpec.identity(p).to_dict()))
    code, out, _ = run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:1", "--sigma-known", "0",
                           "--cov", tmp_path / "cov.json", "--nu", "zero")
    assert code == 0
    res = json.loads(out)
    assert res["theta_hat"] == pytest.approx(-2.0, abs=1e-9)
    assert res["ci"][0] == res["ci"][1] == res["theta_hat"]


def test_debias_known_sigma_halfwidth(tmp_path, capsys):
    prob = generate_problem(CovarianceSpec.identity(120), BetaSpec((0, 1, 2)), 1.0, 100, seed=8)
    xp, yp = write_data(tmp_path, prob.X, prob.y)
    (tmp_path / "cov.json").write_text(json.dumps(CovarianceSpec.identity(120).to_dict()))
    code, out, _ = run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:0", "--sigma-known", "1",
                           "--cov", tmp_path / "cov.json", "--s0", "3")
    assert code == 0
    res = json.loads(out)
    half = (res["ci"][1] - res["ci"][0]) / 2
    assert half == pytest.approx(stats.t.ppf(0.975, 100) / (10 * (1 - res["nu"] / 100)), rel=1e-12)
    assert res["reference"] == "t" and res["sigma_source"] == "known"


def test_debias_unknown_cov_routing(tmp_path, capsys):
    prob = generate_problem(CovarianceSpec.identity(80), BetaSpec((0, 1, 2)), 1.0, 60, seed=2)
    xp, yp = write_data(tmp_path, prob.X, prob.y)
    code, out, _ = run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:1")
    assert code == 0
    res = json.loads(out)
    X = np.loadtxt(xp, delimiter=",")
    y = np.loadtxt(yp, delimiter=",")
    fit, sigma = scaled_lasso(X, y, lambda_default(60, 80, 1, 1.0))
    es = estimated_score(X, np.eye(80)[1])
    assert es.info["path"] == "canonical"
    est = debias_estimated_score(fit, es, y, X, "shat", sigma_hat=sigma)
    assert res["theta_hat"] == pytest.approx(est.theta_hat, rel=1e-12)
    assert res["reference"] == "normal" and res["sigma_source"] == "scaled-lasso"


def test_debias_csv_a0(tmp_path, capsys):
    prob = generate_problem(CovarianceSpec.identity(30), BetaSpec((0, 1)), 1.0, 40, seed=1)
    xp, yp = write_data(tmp_path, prob.X, prob.y)
    a0 = np.zeros(30)
    a0[:2] = [0.6, -0.8]
    np.savetxt(tmp_path / "a0.csv", a0, delimiter=",")
    code, out, _ = run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", tmp_path / "a0.csv")
    assert code == 0 and np.isfinite(json.loads(out)["theta_hat"])


def test_debias_usage_errors(tmp_path, capsys):
    rng = np.random.default_rng(0)
    xp, yp = write_data(tmp_path, rng.standard_normal((10, 4)), rng.standard_normal(9))
    code, _, err = run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:0")
    assert code == 2 and "dimension mismatch" in err
    xp, yp = write_data(tmp_path, rng.standard_normal((10, 4)), rng.standard_normal(10))
    assert run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:4")[0] == 2
    assert run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:x")[0] == 2
    assert run_cli(capsys, "debias", "--x", tmp_path / "missing.csv", "--y", yp, "--a0", "ej:0")[0] == 2


def test_debias_degenerate_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    xp, yp = write_data(tmp_path, rng.standard_normal((10, 30)), rng.standard_normal(10))
    (tmp_path / "cov.json").write_text(json.dumps(CovarianceSpec.identity(30).to_dict()))
    code, _, err = run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:0", "--sigma-known", "0",
                           "--cov", tmp_path / "cov.json")
    assert code == 3 and "degeneracy" in err


def test_malformed_json_exit_2(tmp_path, capsys):
    (tmp_path / "bad.json").write_text('{"n": 10,\n "p": }')
    code, _, err = run_cli(capsys, "simulate", "--config", tmp_path / "bad.json", "--out", tmp_path / "o")
    assert code == 2 and "line 2" in err and "column" in err
    (tmp_path / "c.json").write_text(json.dumps({"n": 10, "p": 5, "s0": 1, "R": 0}))
    assert run_cli(capsys, "simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "o")[0] == 2


# -- check and rates --------------------------------------------------------------------


def test_check_identity_all_pass(tmp_path, capsys):
    (tmp_path / "params.json").write_text(json.dumps({"m": 5_200_000, "k": 4}))
    code, out, _ = run_cli(capsys, "check", "--n", 3_000_000_000, "--p", 11_000_000, "--s0", 4,
                           "--params", tmp_path / "params.json")
    assert code == 0
    rep = json.loads(out)
    assert rep["all_pass"]
    assert all(set(c) == {"name", "lhs", "rhs", "pass", "slack"} for c in rep["clauses"])


def test_check_invalid_params(tmp_path, capsys):
    (tmp_path / "params.json").write_text(json.dumps({"m": 5, "k": 4, "eta2": 1.5}))
    assert run_cli(capsys, "check", "--n", 100, "--p", 50, "--s0", 2, "--params", tmp_path / "params.json")[0] == 2
    (tmp_path / "params.json").write_text(json.dumps({"m": 5, "kk": 4}))
    assert run_cli(capsys, "check", "--n", 100, "--p", 50, "--s0", 2, "--params", tmp_path / "params.json")[0] == 2


def test_rates(capsys):
    code, out, _ = run_cli(capsys, "rates", "--s0", 1, "--somega", 1, "--rho", 1, "--n", 100, "--p", 1000)
    assert code == 0
    assert json.loads(out)["r_lower"] == pytest.approx(0.6908, abs=1e-4)
    assert run_cli(capsys, "rates", "--s0", 0, "--somega", 1, "--rho", 1, "--n", 100, "--p", 1000)[0] == 2


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "dflasso.cli", "rates", "--s0", "1", "--somega", "1", "--rho", "1",
                          "--n", "100", "--p", "1000"], capture_output=True, text=True)
    assert res.returncode == 0 and "r_lower" in res.stdout
    res = subprocess.run([sys.executable, "-m", "dflasso.cli"], capture_output=True, text=True)
    assert res.returncode == 2


@pytest.mark.slow
def test_cli_coverage_over_invocations(tmp_path, capsys):
    n, p, R = 100, 150, 200
    cov = CovarianceSpec.identity(p)
    (tmp_path / "cov.json").write_text(json.dumps(cov.to_dict()))
    hits = 0
    for r in range(R):
        prob = generate_problem(cov, BetaSpec((0, 1, 2)), 1.0, n, seed=30_000 + r)
        xp, yp = write_data(tmp_path, prob.X, prob.y)
        code, out, _ = run_cli(capsys, "debias", "--x", xp, "--y", yp, "--a0", "ej:0", "--sigma-known", "1",
                               "--cov", tmp_path / "cov.json", "--s0", "3")
        assert code == 0
        lo, hi = json.loads(out)["ci"]
        hits += lo <= prob.truth.beta[0] <= hi
    assert 0.91 <= hits / R <= 0.99
