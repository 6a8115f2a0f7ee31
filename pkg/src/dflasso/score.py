"""Score vectors for the direction a0: the ideal z0 = X u0 under known Sigma and the
estimated z_hat from the Q-projected nodewise regression under unknown Sigma."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lasso import LassoConfig, lambda_univ, q_constrained_lasso, tau_fixed_point
from .model import CovarianceSpec

TAU_FLOOR = 1e-6
A_MIN = 2.01
DENSE_Q_MAX_P = 2000


def _projector(u, a0):
    return np.eye(a0.size) - np.outer(u, a0)


@dataclass(frozen=True, eq=False)
class IdealScore:
    a0: np.ndarray
    u0: np.ndarray
    z0: np.ndarray
    C0: float
    F_theta: float
    sigma: float

    def apply_Q0(self, v):
        """Q0 v = v - u0 <a0, v> (v may be p x k)."""
        v = np.asarray(v, dtype=float)
        return v - np.multiply.outer(self.u0, self.a0 @ v)

    @property
    def Q0(self):
        if self.a0.size > DENSE_Q_MAX_P:
            raise MemoryError("Q0 is only materialized for p <= 2000; use apply_Q0")
        return _projector(self.u0, self.a0)


def ideal_score(cov: CovarianceSpec, a0, X, sigma: float = 1.0) -> IdealScore:
    """u0 = Sigma^{-1} a0 / <a0, Sigma^{-1} a0>, z0 = X u0, C0 = ||Sigma^{-1/2} a0||, F = 1/(sigma C0)^2."""
    a0 = np.asarray(a0, dtype=float)
    if not np.any(a0):
        raise ValueError("a0 must be nonzero")
    w = cov.apply_inv(a0)
    q = float(a0 @ w)
    if not q > 0:
        raise ValueError("covariance is singular along a0")
    u0 = w / q
    C0 = np.sqrt(q)
    with np.errstate(divide="ignore"):
        F = 1.0 / (sigma ** 2 * q) if sigma > 0 else np.inf
    return IdealScore(a0=a0, u0=u0, z0=np.asarray(X) @ u0, C0=float(C0), F_theta=float(F), sigma=float(sigma))


@dataclass(frozen=True, eq=False)
class EstimatedScore:
    a0: np.ndarray
    u: np.ndarray
    j0: int
    gamma_hat: np.ndarray
    z: np.ndarray
    z_hat: np.ndarray
    tau_hat: float
    A: float
    penalty: float
    inner_zz: float
    norm_zhat_sq: float
    info: dict = field(default_factory=dict)

    def apply_Q(self, v):
        v = np.asarray(v, dtype=float)
        return v - np.multiply.outer(self.u, self.a0 @ v)

    @property
    def Q(self):
        if self.a0.size > DENSE_Q_MAX_P:
            raise MemoryError("Q is only materialized for p <= 2000; use apply_Q")
        return _projector(self.u, self.a0)


def pivot_direction(a0):
    """j0 = argmax_j |a0_j| (smallest index on ties) and u = e_j0 / a0_j0."""
    a0 = np.asarray(a0, dtype=float)
    j0 = int(np.argmax(np.abs(a0)))
    u = np.zeros(a0.size)
    u[j0] = 1.0 / a0[j0]
    return j0, u


def xq_matrix(X, a0, u):
    """XQ = X - (X u) a0^T."""
    return X - np.outer(X @ u, a0)


def estimated_score(X, a0, lasso_config: LassoConfig | None = None, tau_mode="scaled-lasso",
                    A: float | None = None) -> EstimatedScore:
    """Estimated score z_hat = z - XQ gamma_hat with penalty tau_hat * A * lambda_univ.

    tau_mode is "scaled-lasso" (tau_hat from the noise-level recursion of the
    Q-constrained Lasso itself) or a positive float used as a fixed tau_hat.
    A defaults to max(2.01, max_k ||XQ e_k|| / sqrt(n)).
    """
    X = np.asarray(X, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    if not np.any(a0):
        raise ValueError("a0 must be nonzero")
    n, p = X.shape
    cfg = lasso_config or LassoConfig()
    j0, u = pivot_direction(a0)
    # fit in units where a0_j0 = 1 and map back, so results are exactly equivariant in a0
    scale = float(a0[j0])
    an = a0 / scale
    un = np.zeros(p)
    un[j0] = 1.0
    zn = X[:, j0].copy()
    XQ = xq_matrix(X, an, un)
    A_emp = float(np.sqrt(np.max(np.einsum("ij,ij->j", XQ, XQ)) / n))
    if A is None:
        A = max(A_MIN, A_emp)
    lam_bar = A * lambda_univ(n, p)

    def solve(tau, warm):
        c = LassoConfig(lam=0.0, max_iter=cfg.max_iter, tol=cfg.tol, warm_start=warm)
        gamma, info = q_constrained_lasso(X, zn, an, un, max(tau, TAU_FLOOR) * lam_bar, c)
        resid = zn - X @ gamma
        return (gamma, info), np.linalg.norm(resid) / np.sqrt(n), gamma

    if isinstance(tau_mode, str):
        if tau_mode != "scaled-lasso":
            raise ValueError(f"unknown tau_mode {tau_mode!r}")
        znorm = np.linalg.norm(zn) / np.sqrt(n)
        (gamma, info), tau, tinfo = tau_fixed_point(solve, znorm, floor=1e-8 * znorm)
        info.update(tinfo)
    else:
        tau = float(tau_mode)
        if not tau > 0:
            raise ValueError("fixed tau must be > 0")
        tau *= abs(scale)
        (gamma, info), _, _ = solve(tau, None)
    tau = max(tau, TAU_FLOOR) / abs(scale)
    gamma = gamma / scale
    z = zn / scale
    z_hat = z - X @ gamma
    info["A_empirical"] = A_emp
    info["penalty_unit"] = info.pop("penalty", None)
    return EstimatedScore(
        a0=a0, u=u, j0=j0, gamma_hat=gamma, z=z, z_hat=z_hat, tau_hat=float(tau), A=float(A),
        penalty=float(tau * lam_bar), inner_zz=float(z_hat @ z), norm_zhat_sq=float(z_hat @ z_hat),
        info=info,
    )


def check_score_conditions(score: EstimatedScore, X=None, XQ=None, rtol: float = 1e-6) -> dict:
    """KKT check of the Q-constrained fit: |z_hat^T XQ e_k| / n against penalty * ||Q e_k||_1.

    ``kkt_sup`` is the raw max_k |z_hat^T XQ e_k| / n; ``kkt_ratio`` normalizes each
    column by its subgradient bound ||Q e_k||_1 (1 for canonical a0, at most 2 in general).
    """
    if XQ is None:
        if X is None:
            raise ValueError("need X or XQ")
        XQ = xq_matrix(np.asarray(X, float), score.a0, score.u)
    n = XQ.shape[0]
    g = np.abs(XQ.T @ score.z_hat) / n
    # ||Q e_k||_1 = 1 + |a_k / a_j0| for k != j0, and Q e_j0 = 0
    qnorm = 1.0 + np.abs(score.a0 / score.a0[score.j0])
    qnorm[score.j0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(qnorm > 0, g / (score.penalty * qnorm), 0.0)
    kkt_sup = float(g.max())
    kkt_ratio = float(ratio.max())
    lam_u = lambda_univ(n, score.a0.size)
    return {
        "kkt_sup": kkt_sup,
        "kkt_ratio": kkt_ratio,
        "penalty": score.penalty,
        "pass": kkt_ratio <= 1.0 + rtol,
        "pass_raw": kkt_sup <= score.penalty * (1.0 + rtol),
        "ell1_inputs": {
            "tau_hat": score.tau_hat,
            "A": score.A,
            "lambda_univ": lam_u,
            "gamma_l1": float(np.abs(score.gamma_hat).sum()),
            "gamma_l0": int(np.count_nonzero(score.gamma_hat)),
            "inner_zz_over_n": score.inner_zz / n,
            "norm_zhat_sq_over_n": score.norm_zhat_sq / n,
        },
    }
