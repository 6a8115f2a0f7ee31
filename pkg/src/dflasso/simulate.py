"""Seeded Monte Carlo runner for the bias / calibration experiments."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from time import perf_counter

import numpy as np
from scipy import stats

from .debias import (debias_estimated_score, debias_known_sigma, debias_plugin_estimate, debias_zz,
                     resolve_nu)
from .diagnostics import predicted_dof_bias, stein_terms
from .exceptions import NonUniqueSolutionError
from .lasso import LassoConfig, is_nonunique, lambda_default, lasso_cd, scaled_lasso
from .model import BetaSpec, CovarianceSpec, direction_canonical, direction_sgn_beta, generate_problem
from .score import estimated_score, ideal_score, pivot_direction

IDEAL_VARIANTS = ("ldpe_df", "plugin_jm", "zz")
ESTIMATED_VARIANTS = ("estimated_score",)
EXTRA_COLUMNS = ("sigma_hat", "inner_zz", "pred_bias", "sign_consistent", "stein_inner", "linf_err", "error")


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    p: int
    s0: int
    sigma: float = 1.0
    cov: CovarianceSpec | None = None  # None: identity
    a0_rule: str = "sgn-beta-normalized"  # or "sgn-beta-sigma", "canonical"
    a0_index: int | None = None
    a0_scaled: bool = False
    beta_amplitude: float = 1.0
    beta_signs: str = "random"
    lambda_rule: str | float = "teaser"
    score: str = "ideal"
    noise: str | None = None  # "known" or "scaled"; None picks by score kind
    nu_rules: tuple = ("zero", "shat")
    variants: tuple | None = None
    R: int = 200
    base_seed: int = 0
    alpha: float = 0.05
    design: str = "gaussian"
    scale_tag: str = ""

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not 1 <= self.s0 <= self.p:
            raise ValueError("need 1 <= s0 <= p")
        if self.cov is None:
            object.__setattr__(self, "cov", CovarianceSpec.identity(self.p))
        if self.cov.p != self.p:
            raise ValueError("covariance dimension does not match p")
        if self.score not in ("ideal", "estimated"):
            raise ValueError(f"unknown score kind {self.score!r}")
        if self.a0_rule not in ("sgn-beta-normalized", "sgn-beta-sigma", "canonical"):
            raise ValueError(f"unknown a0 rule {self.a0_rule!r}")
        if self.a0_rule == "canonical" and self.a0_index is None:
            raise ValueError("canonical a0 needs a0_index")
        if self.noise is None:
            object.__setattr__(self, "noise", "known" if self.score == "ideal" else "scaled")
        if self.noise not in ("known", "scaled"):
            raise ValueError(f"unknown noise mode {self.noise!r}")
        for rule in self.nu_rules:
            if rule not in ("zero", "shat") and not isinstance(rule, int):
                raise ValueError(f"unknown nu rule {rule!r}")
        object.__setattr__(self, "nu_rules", tuple(self.nu_rules))
        if self.variants is None:
            object.__setattr__(self, "variants", IDEAL_VARIANTS if self.score == "ideal" else ESTIMATED_VARIANTS)
        object.__setattr__(self, "variants", tuple(self.variants))
        allowed = IDEAL_VARIANTS if self.score == "ideal" else ESTIMATED_VARIANTS
        bad = set(self.variants) - set(allowed)
        if bad:
            raise ValueError(f"variants {sorted(bad)} need the other score kind")
        if isinstance(self.lambda_rule, str) and self.lambda_rule != "teaser":
            raise ValueError(f"unknown lambda rule {self.lambda_rule!r}")

    # lambda_bar is the penalty per unit noise; the Lasso penalty is sigma * lambda_bar
    def lambda_bar(self) -> float:
        if self.lambda_rule == "teaser":
            return lambda_default(self.n, self.p, self.s0, 1.0)
        return float(self.lambda_rule) / (self.sigma if self.sigma > 0 else 1.0)

    def lam(self) -> float:
        if self.lambda_rule == "teaser":
            return lambda_default(self.n, self.p, self.s0, self.sigma)
        return float(self.lambda_rule)

    def beta_spec(self) -> BetaSpec:
        return BetaSpec(tuple(range(self.s0)), self.beta_amplitude, self.beta_signs)

    def columns(self) -> list:
        return [(v, nu) for v in self.variants for nu in self.nu_rules]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cov"] = self.cov.to_dict()
        d["nu_rules"] = list(self.nu_rules)
        d["variants"] = list(self.variants)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if d.get("cov") is not None:
            d["cov"] = CovarianceSpec.from_dict(d["cov"])
        for key in ("nu_rules", "variants"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ReplicationRecord:
    replicate: int
    seed: int
    shat: int = -1
    theta_true: float = math.nan
    theta_hat: dict = field(default_factory=dict)  # key "<variant>_<nu>"
    pivot: dict = field(default_factory=dict)
    se: dict = field(default_factory=dict)
    covered: dict = field(default_factory=dict)
    sigma_hat: float = math.nan
    inner_zz: float = math.nan  # <z_hat, z> / n
    pred_bias: float = math.nan  # predicted_dof_bias at nu = 0 on the true support
    sign_consistent: bool = False  # sgn(beta_hat_S) = sgn(beta_S)
    stein_inner: float = math.nan
    linf_err: float = math.nan
    error: str = ""
    timings: dict = field(default_factory=dict)

    def get(self, name: str):
        for prefix, store in (("theta_hat_", self.theta_hat), ("pivot_", self.pivot), ("se_", self.se),
                              ("cover_", self.covered)):
            if name.startswith(prefix) and name[len(prefix):] in store:
                return store[name[len(prefix):]]
        return getattr(self, name)


def _key(variant, nu):
    return f"{variant}_{nu}"


def _a0(cfg: ExperimentConfig, beta, cov):
    if cfg.a0_rule == "canonical":
        return direction_canonical(cfg.a0_index, cov, cfg.a0_scaled).a0
    rule = "sigma" if cfg.a0_rule == "sgn-beta-sigma" else "sgn"
    return direction_sgn_beta(beta, cov, normalize=True, rule=rule).a0


def run_replication(cfg: ExperimentConfig, r: int) -> ReplicationRecord:
    seed = cfg.base_seed + r
    rec = ReplicationRecord(replicate=r, seed=seed)
    t0 = perf_counter()
    try:
        prob = generate_problem(cfg.cov, cfg.beta_spec(), cfg.sigma, cfg.n, seed, design=cfg.design)
        X, y, truth = prob.X, prob.y, prob.truth
        cov = truth.cov
        a0 = _a0(cfg, truth.beta, cov)
        rec.theta_true = float(a0 @ truth.beta)
        lam = cfg.lam()
        if is_nonunique(X, lam if cfg.noise == "known" else cfg.lambda_bar()):
            raise NonUniqueSolutionError("lambda = 0 with a rank-deficient design: Lasso solution is not unique")
        t1 = perf_counter()
        if cfg.noise == "scaled":
            fit, sigma_hat = scaled_lasso(X, y, cfg.lambda_bar())
            rec.sigma_hat = sigma_hat
        else:
            fit = lasso_cd(X, y, LassoConfig(lam=lam))
            sigma_hat = cfg.sigma
        rec.timings["lasso"] = perf_counter() - t1
        rec.shat = fit.nu
        S = truth.support
        rec.sign_consistent = bool(np.array_equal(np.sign(fit.beta_hat[S]), np.sign(truth.beta[S])))
        rec.linf_err = float(np.abs(fit.beta_hat - truth.beta).max())
        if cfg.sigma > 0:
            rec.stein_inner = stein_terms(prob, fit)[0]
        w = cov.apply_inv(a0)
        F = 1.0 / (cfg.sigma ** 2 * float(a0 @ w)) if cfg.sigma > 0 else math.inf
        try:
            rec.pred_bias = predicted_dof_bias(X, S, np.sign(truth.beta[S]), a0, fit.lam, 0, cfg.n, F)
        except Exception:
            pass

        t2 = perf_counter()
        if cfg.score == "ideal":
            sc = ideal_score(cov, a0, X, cfg.sigma)
            _, u = pivot_direction(a0)
            for nu_rule in cfg.nu_rules:
                for v in cfg.variants:
                    if v == "ldpe_df":
                        est = debias_known_sigma(fit, sc, y, X, nu_rule, cfg.alpha, sigma=sigma_hat)
                    elif v == "plugin_jm":
                        est = debias_plugin_estimate(fit, cov, sc, y, X, nu_rule, cfg.alpha, sigma=sigma_hat)
                    else:
                        est = debias_zz(fit, sc, u, y, X, nu_rule, cfg.alpha, sigma=sigma_hat)
                    _store(rec, v, nu_rule, est, F)
        else:
            es = estimated_score(X, a0)
            rec.inner_zz = es.inner_zz / cfg.n
            for nu_rule in cfg.nu_rules:
                est = debias_estimated_score(fit, es, y, X, nu_rule, cfg.alpha, sigma_hat=sigma_hat)
                _store(rec, "estimated_score", nu_rule, est, F)
        rec.timings["score"] = perf_counter() - t2
    except Exception as exc:  # recorded per row, batch continues
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.timings["total"] = perf_counter() - t0
    return rec


def _store(rec, variant, nu_rule, est, F):
    k = _key(variant, nu_rule)
    est = est.with_pivot(rec.theta_true, F)
    rec.theta_hat[k] = est.theta_hat
    rec.pivot[k] = est.pivot
    rec.se[k] = est.se
    rec.covered[k] = bool(est.ci[0] <= rec.theta_true <= est.ci[1])


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("DEBIAS_LASSO_THREADS", "1") or 1)
    return max(1, int(threads))


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> list[ReplicationRecord]:
    """Run all replications; record r uses seed base_seed + r, so output does not
    depend on the worker count.  Records come back in replicate order."""
    threads = resolve_threads(threads)
    job = partial(run_replication, config)
    if threads == 1 or config.R == 1:
        return [job(r) for r in range(config.R)]
    chunk = max(1, config.R // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, range(config.R), chunksize=chunk))


# -- summaries -----------------------------------------------------------------------


def field_values(records, name: str) -> np.ndarray:
    out = []
    for rec in records:
        try:
            v = rec.get(name)
        except AttributeError:
            v = math.nan
        out.append(math.nan if v is None else float(v))
    return np.asarray(out, dtype=float)


def summarize(records, name: str | None = None) -> dict:
    """Mean, sd, two-sided one-sample t-test of mean zero (R - 1 df) and quartiles.

    ``records`` is a list of ReplicationRecord (with ``name`` a column) or an array.
    """
    x = np.asarray(records, dtype=float) if name is None else field_values(records, name)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError(f"no finite values for {name!r}")
    if x.size < 2:
        raise ValueError("summary needs at least 2 finite values")
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    q = np.percentile(x, [0, 25, 50, 75, 100])
    out = {"n": int(x.size), "mean": mean, "sd": sd, "quartiles": [float(v) for v in q], "degenerate": False}
    if sd == 0.0:
        out.update(t_stat=math.copysign(math.inf, mean) if mean != 0 else 0.0, p_value=0.0, degenerate=True)
        return out
    res = stats.ttest_1samp(x, 0.0)
    out.update(t_stat=float(res.statistic), p_value=float(res.pvalue))
    return out


def summarize_experiment(config: ExperimentConfig, records) -> dict:
    """Per-(variant, nu) pivot summaries plus coverage and error counts."""
    out = {"config": config.to_dict(), "R": len(records),
           "errors": sum(1 for r in records if r.error), "columns": {}}
    for v, nu in config.columns():
        k = _key(v, nu)
        try:
            s = summarize(records, f"pivot_{k}")
        except ValueError:
            s = None
        cov = field_values(records, f"cover_{k}")
        s = s or {}
        s["coverage"] = float(np.nanmean(cov)) if np.isfinite(cov).any() else math.nan
        out["columns"][k] = s
        if s.get("mean") is not None:
            out[f"mean_pivot_{k}"] = s["mean"]
    for v in config.variants:
        if f"mean_pivot_{v}_zero" in out:
            out.setdefault("mean_pivot_zero", out[f"mean_pivot_{v}_zero"])
        if f"mean_pivot_{v}_shat" in out:
            out.setdefault("mean_pivot_shat", out[f"mean_pivot_{v}_shat"])
    shat = field_values(records, "shat")
    out["mean_shat"] = float(np.nanmean(shat[shat >= 0])) if np.any(shat >= 0) else math.nan
    return out


# -- presets -------------------------------------------------------------------------

FULL_N, FULL_P = 4000, 6000


def _scaled(x: int, scale: float) -> int:
    return max(1, int(round(x * scale)))


def fig1_config(s0: int = 20, scale: float = 0.1, R: int = 200, base_seed: int = 0) -> ExperimentConfig:
    """Identity design, a0 = sgn(beta) normalized, teaser lambda; s0 is the full-scale sparsity
    and (n, p, s0) are all multiplied by ``scale`` and rounded."""
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    n, p, s = _scaled(FULL_N, scale), _scaled(FULL_P, scale), _scaled(s0, scale)
    return ExperimentConfig(n=n, p=p, s0=s, sigma=1.0, cov=CovarianceSpec.identity(p), R=R, base_seed=base_seed,
                            scale_tag=f"fig1 s0={s0} scale={scale}")


def fig2_config(scale: float = 0.1, R: int = 200, base_seed: int = 0, j: int | None = None) -> ExperimentConfig:
    """Sigma^{-1} = I + c (sgn(beta) e_j^T + e_j sgn(beta)^T), a0 = e_j / (Sigma^{-1})_jj.

    c = 0.07 at full scale (s0 = 120) and rescaled so c sqrt(s0) stays fixed.  j defaults
    to the first support index: with j outside the support (a0)_S = 0 and the
    selection bias of the unadjusted estimate vanishes under sign consistency.
    """
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    n, p, s0 = _scaled(FULL_N, scale), _scaled(FULL_P, scale), _scaled(120, scale)
    c = 0.07 * math.sqrt(120 / s0)
    j = 0 if j is None else j
    cov = CovarianceSpec.rank1inv(p, j, c)
    return ExperimentConfig(n=n, p=p, s0=s0, sigma=1.0, cov=cov, a0_rule="canonical", a0_index=j, a0_scaled=True,
                            R=R, base_seed=base_seed, scale_tag=f"fig2 scale={scale}")


# -- I/O -----------------------------------------------------------------------------


def csv_header(config: ExperimentConfig) -> list:
    cols = ["replicate", "seed", "shat", "theta_true"]
    for v, nu in config.columns():
        cols += [f"theta_hat_{_key(v, nu)}", f"pivot_{_key(v, nu)}"]
    for v, nu in config.columns():
        cols += [f"se_{_key(v, nu)}", f"cover_{_key(v, nu)}"]
    return cols + list(EXTRA_COLUMNS)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_records_csv(records, config: ExperimentConfig, path) -> None:
    header = csv_header(config)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in records:
            row = []
            for col in header:
                try:
                    v = rec.get(col)
                except AttributeError:
                    v = math.nan
                row.append(_fmt(v))
            w.writerow(row)


def read_records_csv(path) -> list[dict]:
    """Rows as dicts of floats (error column kept as text)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: (v if k == "error" else float(v)) for k, v in row.items()})
    return out


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")
