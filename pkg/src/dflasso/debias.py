"""De-biased estimators of theta = <a0, beta> with the degrees-of-freedom factor (1 - nu/n)."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .exceptions import DegenerateFitError
from .lasso import LassoFit
from .model import CovarianceSpec
from .score import EstimatedScore, IdealScore

VARIANTS = ("ldpe_df", "plugin_jm", "zz", "estimated_score")


@dataclass(frozen=True, eq=False)
class DebiasedEstimate:
    theta_hat: float
    variant: str
    nu: int
    n: int
    score_kind: str  # "ideal" (t_n reference) or "estimated" (normal reference)
    se: float
    ci: tuple
    base: float  # <a0, beta_hat>
    pivot: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def reference(self) -> str:
        return "t" if self.score_kind == "ideal" else "normal"

    def with_pivot(self, theta_true: float, F_theta: float) -> DebiasedEstimate:
        return replace(self, pivot=pivot(self, theta_true, F_theta, self.n))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "nu": self.nu,
            "theta_hat": self.theta_hat,
            "se": self.se,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "alpha": self.ci[2],
            "pivot": self.pivot,
        }


def resolve_nu(rule, fit: LassoFit, n: int) -> int:
    """nu for rule "zero", "shat" (|S_hat|) or an explicit integer."""
    if rule == "zero":
        nu = 0
    elif rule == "shat":
        nu = fit.nu
    elif isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        nu = int(rule)
    else:
        raise ValueError(f"unknown nu rule {rule!r}")
    if not 0 <= nu < n:
        raise ValueError(f"nu={nu} must lie in [0, n={n})")
    return nu


def quantile(alpha: float, n: int, reference: str) -> float:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if reference == "t":
        return float(stats.t.ppf(1 - alpha / 2, df=n))
    return float(stats.norm.ppf(1 - alpha / 2))


def se_ideal(sigma, C0: float, n: int, nu: int) -> float:
    """sigma C0 / (sqrt(n) (1 - nu/n))."""
    if sigma is None:
        raise ValueError("noise level required: pass a known sigma or an estimate")
    return float(sigma * C0 / (np.sqrt(n) * (1 - nu / n)))


def se_estimated(sigma_hat, score: EstimatedScore, nu: int, n: int) -> float:
    """sigma_hat ||z_hat|| / (|<z_hat, z>| (1 - nu/n))."""
    if sigma_hat is None:
        raise ValueError("noise level required: no sigma_hat available")
    return float(sigma_hat * np.sqrt(score.norm_zhat_sq) / (abs(score.inner_zz) * (1 - nu / n)))


def confidence_interval(estimate: DebiasedEstimate, n: int | None = None, alpha: float = 0.05,
                        reference: str | None = None):
    """theta_hat +- q(1 - alpha/2) se with q from t_n (ideal score) or N(0,1) (estimated)."""
    n = estimate.n if n is None else n
    q = quantile(alpha, n, reference or estimate.reference)
    return (estimate.theta_hat - q * estimate.se, estimate.theta_hat + q * estimate.se, alpha)


def pivot(estimate: DebiasedEstimate, theta_true: float, F_theta: float, n: int | None = None) -> float:
    """sqrt(n F) (1 - nu/n) (theta_hat - theta)."""
    n = estimate.n if n is None else n
    return float(np.sqrt(n * F_theta) * (1 - estimate.nu / n) * (estimate.theta_hat - theta_true))


def _build(theta, variant, nu, n, kind, se, base, alpha, info=None):
    est = DebiasedEstimate(theta_hat=float(theta), variant=variant, nu=nu, n=n, score_kind=kind,
                           se=se, ci=(np.nan, np.nan, alpha), base=float(base), info=info or {})
    return replace(est, ci=confidence_interval(est, n, alpha))


def _residual(fit, y, X):
    return np.asarray(y, float) - np.asarray(X, float) @ fit.beta_hat


def debias_known_sigma(fit: LassoFit, score: IdealScore, y, X, nu_rule="shat",
                       alpha: float = 0.05, sigma=None) -> DebiasedEstimate:
    """theta_hat = <a0, beta_hat> + <z0, r> / (||z0||^2 (1 - nu/n))."""
    n = X.shape[0]
    nu = resolve_nu(nu_rule, fit, n)
    z0sq = float(score.z0 @ score.z0)
    if not z0sq > 0:
        raise DegenerateFitError("score vector z0 vanishes")
    base = float(score.a0 @ fit.beta_hat)
    theta = base + float(score.z0 @ _residual(fit, y, X)) / (z0sq * (1 - nu / n))
    sig = score.sigma if sigma is None else sigma
    return _build(theta, "ldpe_df", nu, n, "ideal", se_ideal(sig, score.C0, n, nu), base, alpha)


def debias_plugin(fit: LassoFit, cov: CovarianceSpec, y, X, nu, a0=None):
    """beta_db = beta_hat + Sigma^{-1} X^T r / (n - nu); returns (beta_db, <a0, beta_db>)."""
    n = X.shape[0]
    nu = resolve_nu(nu, fit, n)
    beta_db = fit.beta_hat + cov.apply_inv(np.asarray(X, float).T @ _residual(fit, y, X)) / (n - nu)
    theta = None if a0 is None else float(np.asarray(a0, float) @ beta_db)
    return beta_db, theta


def debias_plugin_estimate(fit: LassoFit, cov: CovarianceSpec, score: IdealScore, y, X, nu_rule="shat",
                           alpha: float = 0.05, sigma=None) -> DebiasedEstimate:
    """Plug-in estimate for score.a0 packaged with the ideal-score standard error."""
    n = X.shape[0]
    nu = resolve_nu(nu_rule, fit, n)
    _, theta = debias_plugin(fit, cov, y, X, nu, score.a0)
    sig = score.sigma if sigma is None else sigma
    return _build(theta, "plugin_jm", nu, n, "ideal", se_ideal(sig, score.C0, n, nu),
                  score.a0 @ fit.beta_hat, alpha)


def debias_zz(fit: LassoFit, score: IdealScore, u, y, X, nu="shat", alpha: float = 0.05,
              sigma=None) -> DebiasedEstimate:
    """theta_hat = <a0, beta_hat> + <z0, r> / (<z0, X u> (1 - nu/n)) for any u with <u, a0> = 1."""
    u = np.asarray(u, float)
    if abs(float(u @ score.a0) - 1.0) > 1e-10:
        raise ValueError("<u, a0> must equal 1")
    n = X.shape[0]
    nu = resolve_nu(nu, fit, n)
    den = float(score.z0 @ (np.asarray(X, float) @ u))
    if abs(den) < 1e-10 * n:
        raise DegenerateFitError(f"<z0, X u> = {den:.3g} is numerically zero")
    base = float(score.a0 @ fit.beta_hat)
    theta = base + float(score.z0 @ _residual(fit, y, X)) / (den * (1 - nu / n))
    sig = score.sigma if sigma is None else sigma
    return _build(theta, "zz", nu, n, "ideal", se_ideal(sig, score.C0, n, nu), base, alpha)


def debias_estimated_score(fit: LassoFit, score: EstimatedScore, y, X, nu_rule="shat",
                           alpha: float = 0.05, sigma_hat=None) -> DebiasedEstimate:
    """theta_hat = <a0, beta_hat> + <z_hat, r> / ((1 - nu/n) <z_hat, z>).

    sigma_hat defaults to the noise level recorded by a scaled-Lasso fit.
    """
    n = X.shape[0]
    nu = resolve_nu(nu_rule, fit, n)
    if abs(score.inner_zz) < 1e-10 * n:
        raise DegenerateFitError(f"<z_hat, z> = {score.inner_zz:.3g} is numerically zero")
    base = float(score.a0 @ fit.beta_hat)
    theta = base + float(score.z_hat @ _residual(fit, y, X)) / ((1 - nu / n) * score.inner_zz)
    if sigma_hat is None:
        sigma_hat = fit.info.get("tau_hat")
    se = se_estimated(sigma_hat, score, nu, n)
    return _build(theta, "estimated_score", nu, n, "estimated", se, base, alpha,
                  {"sigma_hat": float(sigma_hat)})
