"""Lasso solvers: coordinate descent, the scaled-Lasso noise recursion and the
Q-constrained Lasso used to estimate the score direction.

All objectives are normalized as ||y - X b||^2 / (2 n) + lam ||b||_1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

from .exceptions import DegenerateFitError

TOL_REL = 1e-7
TOL_FLOOR = 1e-14


@dataclass
class LassoConfig:
    lam: float = 0.0
    max_iter: int = 10_000
    tol: float | None = None  # None: TOL_REL * ||X^T y||_inf / n
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class LassoFit:
    beta_hat: np.ndarray
    support: np.ndarray
    residual: np.ndarray
    n_iter: int
    converged: bool
    kkt_violation: float
    lam: float
    tol: float
    objective_trace: np.ndarray
    nonunique: bool = False
    info: dict = field(default_factory=dict)

    @property
    def nu(self) -> int:
        return int(self.support.size)

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "support": self.support.tolist(),
            "n_iter": self.n_iter,
            "converged": self.converged,
            "kkt_violation": self.kkt_violation,
            "lambda": self.lam,
            "nonunique": self.nonunique,
        }


# -- numba kernel ---------------------------------------------------------------


@njit(cache=True)
def _objective(r, beta, lam, nrm):
    return 0.5 * np.dot(r, r) / nrm + lam * np.sum(np.abs(beta))


@njit(cache=True)
def _kkt(X, r, beta, lam, nrm):
    p = X.shape[1]
    worst = 0.0
    for j in range(p):
        g = np.dot(X[:, j], r) / nrm
        if beta[j] > 0:
            v = abs(g - lam)
        elif beta[j] < 0:
            v = abs(g + lam)
        else:
            v = max(abs(g) - lam, 0.0)
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _update(X, r, beta, colsq, j, lam, nrm):
    c = colsq[j]
    if c == 0.0:
        old = beta[j]
        beta[j] = 0.0
        return abs(old)
    h = c / nrm
    old = beta[j]
    g = np.dot(X[:, j], r) / nrm + h * old
    a = abs(g) - lam
    new = 0.0
    if a > 0.0:
        new = a / h if g > 0 else -a / h
    d = new - old
    if d != 0.0:
        beta[j] = new
        r -= d * X[:, j]
    return abs(d) * h


@njit(cache=True)
def _cd_kernel(X, y, beta, lam, nrm, tol, max_iter, trace):
    n, p = X.shape
    colsq = np.empty(p)
    for j in range(p):
        colsq[j] = np.dot(X[:, j], X[:, j])
    r = y - X @ beta
    active = np.empty(p, dtype=np.int64)
    it = 0
    viol = np.inf
    while it < max_iter:
        for j in range(p):
            _update(X, r, beta, colsq, j, lam, nrm)
        trace[it] = _objective(r, beta, lam, nrm)
        it += 1
        viol = _kkt(X, r, beta, lam, nrm)
        if viol < tol:
            break
        na = 0
        for j in range(p):
            if beta[j] != 0.0:
                active[na] = j
                na += 1
        for _ in range(200):
            dmax = 0.0
            for a in range(na):
                d = _update(X, r, beta, colsq, active[a], lam, nrm)
                if d > dmax:
                    dmax = d
            if dmax < 0.1 * tol:
                break
    r[:] = y - X @ beta
    viol = _kkt(X, r, beta, lam, nrm)
    return r, it, viol


# -- public solvers --------------------------------------------------------------


def default_tol(X, y) -> float:
    n = X.shape[0]
    return max(TOL_REL * float(np.max(np.abs(X.T @ y), initial=0.0)) / n, TOL_FLOOR)


def _check_inputs(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: X {X.shape}, y {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite (NaN or inf found)")
    return X, y


def is_nonunique(X, lam: float) -> bool:
    """True when lam == 0 and the design cannot identify a unique minimizer."""
    if lam > 0:
        return False
    n, p = X.shape
    if p > n or np.any(np.einsum("ij,ij->j", X, X) == 0):
        return True
    return np.linalg.matrix_rank(X) < p


def lasso_cd(X, y, config: LassoConfig, nrm: float | None = None) -> LassoFit:
    """Cyclic coordinate descent with active-set sweeps between full KKT checks.

    ``nrm`` overrides the loss divisor (defaults to the number of rows).
    """
    X, y = _check_inputs(X, y)
    n, p = X.shape
    nrm = float(n if nrm is None else nrm)
    tol = default_tol(X, y) if config.tol is None else float(config.tol)
    beta = np.zeros(p) if config.warm_start is None else np.array(config.warm_start, dtype=float)
    if beta.shape != (p,):
        raise ValueError("warm start must have length p")
    Xf = np.asfortranarray(X)
    trace = np.empty(max(config.max_iter, 1))
    r, it, viol = _cd_kernel(Xf, y, beta, float(config.lam), nrm, tol, int(config.max_iter), trace)
    return LassoFit(
        beta_hat=beta,
        support=np.flatnonzero(beta),
        residual=r,
        n_iter=int(it),
        converged=bool(viol < tol),
        kkt_violation=float(viol),
        lam=float(config.lam),
        tol=tol,
        objective_trace=trace[:it].copy(),
        nonunique=is_nonunique(X, config.lam),
    )


def lambda_default(n: int, p: int, k: int, sigma: float = 1.0) -> float:
    """1.01 sigma sqrt(2 log(8p/k) / n)."""
    if not 1 <= k <= p:
        raise ValueError("need 1 <= k <= p")
    return 1.01 * sigma * np.sqrt(2.0 * np.log(8.0 * p / k) / n)


def lambda_univ(n: int, p: int) -> float:
    return float(np.sqrt(2.0 * np.log(p) / n))


def tau_fixed_point(solve, tau0: float, tau_tol: float = 1e-6, max_outer: int = 50, floor: float = 0.0):
    """Iterate tau <- solve(tau, warm)[1] from tau0.

    ``solve(tau, warm)`` returns (result, tau_new, warm_next).  Stops when
    |tau_new - tau| < tau_tol * tau and returns (result, tau, info) with result
    computed at the returned tau.  After two sign flips of the update the step is
    damped to the midpoint.
    """
    tau = tau0
    warm = None
    flips, last_sign, damped = 0, 0, False
    for outer in range(1, max_outer + 1):
        result, tau_new, warm = solve(tau, warm)
        if tau_new < floor:
            raise DegenerateFitError(f"noise-level recursion collapsed (tau={tau_new:.3g}): the fit interpolates")
        delta = tau_new - tau
        if abs(delta) < tau_tol * tau:
            return result, float(tau), {"outer_iter": outer, "tau_converged": True, "damped": damped}
        sgn = 1 if delta > 0 else -1
        if last_sign and sgn != last_sign:
            flips += 1
        last_sign = sgn
        tau = 0.5 * (tau + tau_new) if flips >= 2 else tau_new
        damped = damped or flips >= 2
    # no fixed point within budget: refit at the last tau so the pair stays consistent
    result, _, _ = solve(tau, warm)
    return result, float(tau), {"outer_iter": max_outer, "tau_converged": False, "damped": damped}


def scaled_lasso(
    X, y, lambda0_bar: float, config: LassoConfig | None = None,
    tau_tol: float = 1e-6, max_outer: int = 50,
):
    """Joint (beta, noise level) fit via tau <- ||y - X beta(tau lambda0_bar)|| / sqrt(n).

    Starts at tau = ||y|| / sqrt(n) and warm-starts each Lasso.  Returns
    (fit, tau_hat) with the fit computed at lam = tau_hat * lambda0_bar.
    """
    if not lambda0_bar > 0:
        raise ValueError("lambda0_bar must be > 0")
    X, y = _check_inputs(X, y)
    n = X.shape[0]
    config = config or LassoConfig()
    ynorm = np.linalg.norm(y) / np.sqrt(n)
    if not ynorm > 0:
        raise DegenerateFitError("response is identically zero")
    Xf = np.asfortranarray(X)

    def solve(tau, warm):
        warm = config.warm_start if warm is None else warm
        fit = lasso_cd(Xf, y, LassoConfig(tau * lambda0_bar, config.max_iter, config.tol, warm))
        return fit, np.linalg.norm(fit.residual) / np.sqrt(n), fit.beta_hat

    fit, tau, info = tau_fixed_point(solve, ynorm, tau_tol, max_outer, floor=1e-8 * ynorm)
    fit.info.update(info, tau_hat=tau)
    return fit, tau


# -- Q-constrained Lasso ------------------------------------------------------------


def _soft(x, t):
    return np.sign(x) * max(abs(x) - t, 0.0)


def reduction(a0):
    """Pivot index j0 = argmax |a0_j| (smallest on ties) and c = a0_{-j0} / a0_{j0}."""
    a0 = np.asarray(a0, dtype=float)
    j0 = int(np.argmax(np.abs(a0)))
    c = np.delete(a0, j0) / a0[j0]
    return j0, c


def analysis_kkt(g, w, c, pen, zero_tol=1e-12, kink=None):
    """KKT violation for min loss(w) + pen(||w||_1 + |c^T w|) given g = -grad loss.

    Minimizes over the subgradient of |c^T w| when c^T w sits at the kink, which is
    decided by ``kink`` or, if None, by |c^T w| <= zero_tol ||w||_1.
    """
    ctw = float(c @ w)
    nz = w != 0

    def viol(s):
        v = g - pen * s * c
        out = np.where(nz, np.abs(v - pen * np.sign(w)), np.maximum(np.abs(v) - pen, 0.0))
        return float(out.max(initial=0.0))

    if kink is None:
        kink = abs(ctw) <= zero_tol * max(np.abs(w).sum(), 1.0)
    if not kink:
        return viol(np.sign(ctw)), float(np.sign(ctw))
    res = minimize_scalar(viol, bounds=(-1.0, 1.0), method="bounded", options={"xatol": 1e-12})
    best = min((res.fun, res.x), (viol(-1.0), -1.0), (viol(1.0), 1.0), (viol(0.0), 0.0))
    return float(best[0]), float(best[1])


def q_constrained_lasso(X, z, a0, u, penalty: float, config: LassoConfig | None = None,
                        max_admm: int = 2000):
    """gamma_hat = Q b_hat with b_hat minimizing ||z - XQb||^2/(2n) + penalty ||Qb||_1, Q = I - u a0^T.

    The image of Q is the hyperplane a0^T gamma = 0, so the problem is solved over
    w = gamma_{-j0} with gamma_{j0} = -c^T w.  Canonical a0 (a single nonzero) is a
    plain Lasso of z on X without column j0; otherwise the coupled term |c^T w| is
    split off and handled by ADMM with exact Lasso w-steps.
    """
    X, z = _check_inputs(X, z)
    a0 = np.asarray(a0, dtype=float)
    u = np.asarray(u, dtype=float)
    if abs(float(u @ a0) - 1.0) > 1e-10:
        raise ValueError(f"<u, a0> must equal 1 (got {float(u @ a0)!r})")
    if not penalty > 0:
        raise ValueError("penalty must be > 0")
    config = config or LassoConfig()
    n, p = X.shape
    j0, c = reduction(a0)
    W = np.delete(X, j0, axis=1)
    if np.any(c != 0):
        W = W - np.outer(X[:, j0], c)
    W = np.asfortranarray(W)
    tol = default_tol(W, z) if config.tol is None else float(config.tol)
    warm = None if config.warm_start is None else np.delete(np.asarray(config.warm_start, float), j0)

    if not np.any(c != 0):
        fit = lasso_cd(W, z, LassoConfig(lam=penalty, max_iter=config.max_iter, tol=tol, warm_start=warm))
        w, converged, viol, iters = fit.beta_hat, fit.converged, fit.kkt_violation, fit.n_iter
        info = {"path": "canonical", "admm_iter": 0}
    else:
        w, converged, viol, iters = _admm(W, z, c, penalty, tol, config.max_iter, max_admm, warm)
        info = {"path": "admm", "admm_iter": iters}

    gamma = np.insert(w, j0, -float(c @ w))
    resid = z - W @ w
    info.update(
        j0=j0,
        converged=bool(converged),
        kkt_violation=float(viol),
        tol=tol,
        objective=0.5 * float(resid @ resid) / n + penalty * (np.abs(w).sum() + abs(float(c @ w))),
        penalty=float(penalty),
    )
    return gamma, info


def _admm(W, z, c, pen, tol, max_cd, max_admm, warm):
    n, q = W.shape
    # scale-free start: average curvature of the loss, so the iterates are equivariant in a0
    rho = max(float(np.einsum("ij,ij->", W, W)) / (n * q), 1e-12)
    Xs = np.empty((n + 1, q), order="F")
    Xs[:n] = W
    Xs[n] = np.sqrt(n * rho) * c
    ys = np.empty(n + 1)
    ys[:n] = z
    w = np.zeros(q) if warm is None else warm.copy()
    t = float(c @ w)
    mu = 0.0
    best = (np.inf, w.copy())
    viol = np.inf
    for k in range(1, max_admm + 1):
        ys[n] = np.sqrt(n * rho) * (t - mu)
        fit = lasso_cd(Xs, ys, LassoConfig(lam=pen, max_iter=max_cd, tol=0.1 * tol, warm_start=w), nrm=n)
        w = fit.beta_hat
        ctw = float(c @ w)
        t_old = t
        t = _soft(ctw + mu, pen / rho)
        mu += ctw - t
        r_prim = abs(ctw - t)
        g = W.T @ (z - W @ w) / n
        viol, _ = analysis_kkt(g, w, c, pen, kink=(t == 0.0))
        viol = max(viol, pen * r_prim)
        if viol < best[0]:
            best = (viol, w.copy())
        if viol < tol:
            return w, True, viol, k
        r_dual = rho * abs(t - t_old) * np.linalg.norm(c)
        if r_prim > 10 * r_dual:
            rho *= 2.0
            mu /= 2.0
            Xs[n] = np.sqrt(n * rho) * c
        elif r_dual > 10 * r_prim:
            rho /= 2.0
            mu *= 2.0
            Xs[n] = np.sqrt(n * rho) * c
    return best[1], False, best[0], max_admm
