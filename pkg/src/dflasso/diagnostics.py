"""Structural conditions and closed-form bias / rate formulas, evaluated numerically."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from math import comb, lgamma, log, sqrt

import numpy as np

from .exceptions import DegenerateFitError
from .model import CovarianceSpec

EXACT_LIMIT = 10 ** 6


# -- sparse eigenvalues --------------------------------------------------------------


@dataclass
class SparseEigenReport:
    m: int
    B: tuple
    phi_min: float
    phi_max: float
    phi_cond: float
    exact: bool
    n_subsets: int = 0

    def to_dict(self):
        d = asdict(self)
        d["B"] = list(self.B)
        return d


class _Sub:
    """Principal-submatrix access for dense matrices and covariance specs."""

    def __init__(self, M):
        if isinstance(M, CovarianceSpec):
            self.p = M.p
            self.identity = M.kind == "identity"
            self.get = M.submatrix
            self.diag = M.diag
        else:
            M = np.asarray(M, dtype=float)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError("M must be square")
            self.p = M.shape[0]
            self.identity = False
            self.get = lambda r, c: M[np.ix_(r, c)]
            self.diag = lambda: np.diag(M).copy()

    def eig(self, A):
        A = np.asarray(A, dtype=int)
        w = np.linalg.eigvalsh(self.get(A, A))
        return w[0], w[-1]


def _greedy(sub: _Sub, B, rest, size, which):
    """Grow B by ``size`` indices from ``rest``, each step picking the index whose
    one-step Rayleigh bound moves the extreme eigenvalue furthest."""
    A = list(B)
    pool = list(rest)
    d = sub.diag()
    for _ in range(size):
        if not A:
            j = pool[int(np.argmin(d[pool]) if which == "min" else np.argmax(d[pool]))]
        else:
            M_AA = sub.get(A, A)
            w, V = np.linalg.eigh(M_AA)
            lam, v = (w[0], V[:, 0]) if which == "min" else (w[-1], V[:, -1])
            cross = sub.get(pool, A) @ v
            gap = (d[pool] - lam) if which == "min" else (lam - d[pool])
            score = cross ** 2 / np.maximum(gap, 1e-12) + np.maximum(-gap, 0.0)
            j = pool[int(np.argmax(score))]
        A.append(j)
        pool.remove(j)
    return A


def sparse_eigen(M, m: int, B=(), mode: str = "exact", trials: int = 1000, seed: int = 0) -> SparseEigenReport:
    """Lower/upper sparse eigenvalues and sparse condition number of M.

    By eigenvalue interlacing the extremes over {A : |A \\ B| = m} are attained at
    A = B u C with |C| = m, C disjoint from B, and the condition number over
    |A \\ B| <= 1 v m at |C| = 1 v m; only those sets are evaluated.  ``mode="sampled"``
    evaluates ``trials`` random C plus greedy adversarial sets and reports bounds
    (phi_min from above, phi_max and phi_cond from below) unless the random draw
    already covers every C.  ``M`` may be a dense matrix or a CovarianceSpec.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    sub = _Sub(M)
    B = tuple(sorted(set(int(b) for b in B)))
    if sub.identity:
        return SparseEigenReport(m, B, 1.0, 1.0, 1.0, True, 0)
    rest = np.setdiff1d(np.arange(sub.p), B)
    size = min(max(m, 1), rest.size)
    total = comb(rest.size, size)

    if mode == "exact":
        if total > EXACT_LIMIT:
            raise ValueError(
                f"exact enumeration needs C({rest.size},{size}) = {total} subsets (> {EXACT_LIMIT}); use mode='sampled'"
            )
        subsets = itertools.combinations(rest.tolist(), size)
        exact = True
    elif mode == "sampled":
        if trials >= total:
            subsets = itertools.combinations(rest.tolist(), size)
            exact = True
        else:
            rng = np.random.default_rng(seed)
            draws = [rng.choice(rest, size=size, replace=False) for _ in range(trials)]
            draws.append(np.array(_greedy(sub, B, rest, size, "min")[len(B):]))
            draws.append(np.array(_greedy(sub, B, rest, size, "max")[len(B):]))
            subsets = draws
            exact = False
    else:
        raise ValueError(f"unknown mode {mode!r}")

    lo, hi, cond, count = np.inf, -np.inf, 1.0, 0
    for C in subsets:
        A = list(B) + list(C)
        wmin, wmax = sub.eig(A)
        lo = min(lo, wmin)
        hi = max(hi, wmax)
        cond = max(cond, wmax / wmin if wmin > 0 else np.inf)
        count += 1
    return SparseEigenReport(m, B, float(lo), float(hi), float(cond), exact, count)


# -- Assumption 1 ---------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionParams:
    m: int
    k: int
    rho_star: float = 0.5
    eta2: float = 1 / sqrt(1.01)
    eta3: float = sqrt(1.01) - 1
    eps1: float = 0.25
    eps2: float = 0.25
    eps3: float = 1 / 256
    eps4: float = 1 / 256

    def __post_init__(self):
        if self.m < 0 or self.k < 0:
            raise ValueError("m and k must be nonnegative")
        for name in ("eta2", "eta3"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name}={v} must lie in (0, 1)")
        for name in ("rho_star", "eps1", "eps2", "eps3", "eps4"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def tau_star(self) -> float:
        return (1 - self.eps1 - self.eps2) ** 2

    @property
    def tau_upper(self) -> float:
        return (1 + self.eps1 + self.eps2) ** 2

    def lambda0(self, n: int, p: int) -> float:
        return sqrt(2.0 / n * log(8.0 * p / max(self.k, 1)))

    def lam(self, n: int, p: int, sigma: float = 1.0) -> float:
        return (1 + self.eta3) / self.eta2 * sigma * self.lambda0(n, p)

    def s_star(self, s0: int) -> int:
        return s0 + self.m + self.k

    @classmethod
    def from_dict(cls, d: dict) -> AssumptionParams:
        return cls(**d)


def teaser_params(s0: int, m: int, rho_star: float = 0.5) -> AssumptionParams:
    """eta2^-1 = sqrt(1.01), eta3 = sqrt(1.01) - 1, k = s0, eps1 = eps2 = 1/4, eps3 = eps4 = 1/256."""
    return AssumptionParams(m=m, k=s0, rho_star=rho_star)


def src_rhs(params: AssumptionParams, phi_cond: float) -> float:
    """Right side of the sparse Riesz condition s0 + k < rhs."""
    den = (1 + params.eta2) ** 2 * ((params.tau_upper / params.tau_star) * phi_cond - 1)
    if den <= 0:
        return np.inf
    return (1 - params.eta2) ** 2 * 2 * params.m / den


def minimal_m(s0: int, k: int, phi_cond: float = 1.0, **kw) -> int:
    """Smallest m passing the sparse Riesz condition when phi_cond does not grow with m."""
    unit = src_rhs(AssumptionParams(m=1, k=k, **kw), phi_cond)
    return int(np.floor((s0 + k) / unit)) + 1


def log_binom(a: int, b: int) -> float:
    if b < 0 or b > a:
        return -np.inf
    return lgamma(a + 1) - lgamma(b + 1) - lgamma(a - b + 1)


def _clause(name, lhs, rhs, ok, slack):
    return {"name": name, "lhs": float(lhs), "rhs": float(rhs), "pass": bool(ok), "slack": float(slack)}


def check_assumption_main(cov: CovarianceSpec, n: int, p: int, s0: int, params: AssumptionParams,
                          support=None, mode: str = "sampled", trials: int = 1000, diag_tol: float = 1e-9) -> dict:
    """Evaluate each displayed inequality of the main assumption; returns per-clause reports.

    Sparse eigenvalues on S are exact for the identity and otherwise follow ``mode``.
    """
    S = np.arange(s0) if support is None else np.asarray(support, dtype=int)
    P = params
    mk = P.m + P.k
    lam0 = P.lambda0(n, p)
    s_star = P.s_star(s0)
    clauses = []

    rep = sparse_eigen(cov, mk, S, mode=mode, trials=trials)
    rhs = src_rhs(P, rep.phi_cond)
    clauses.append(_clause("sparse_riesz", s0 + P.k, rhs, s0 + P.k < rhs, rhs - (s0 + P.k)))
    clauses.append(_clause("rho_star", P.rho_star, rep.phi_min, P.rho_star <= rep.phi_min, rep.phi_min - P.rho_star))
    v = lam0 * sqrt(s_star)
    clauses.append(_clause("lambda0_sqrt_s_star", v, 1.0, v <= 1.0, 1.0 - v))
    lhs, r = 2 * mk + s0 + 1, min(n - 1, p + 1)
    clauses.append(_clause("full_rank_2m", lhs, r, lhs <= r, r - lhs))
    e12 = P.eps1 + P.eps2
    clauses.append(_clause("eps1_plus_eps2", e12, 1.0, e12 < 1.0, 1.0 - e12))
    e34, target = P.eps3 + P.eps4, P.eps2 ** 2 / 8
    clauses.append(_clause("eps3_plus_eps4", e34, target, abs(e34 - target) <= 1e-12, -abs(e34 - target)))
    lhs, r = s0 + mk + 1, min(p + 1, P.eps1 ** 2 * n / 2)
    clauses.append(_clause("size_eps1", lhs, r, lhs <= r, r - lhs))
    lb, r = log_binom(p - s0, mk), P.eps3 * n
    clauses.append(_clause("log_binom_eps3", lb, r, lb <= r, r - lb))
    dmax = float(cov.diag().max()) if not cov.kind == "identity" else 1.0
    diag_ok = dmax <= 1 + diag_tol
    return {
        "clauses": clauses,
        "all_pass": all(c["pass"] for c in clauses),
        "warnings": [] if diag_ok else [f"max diagonal of Sigma is {dmax:.6g} > 1"],
        "lambda": P.lam(n, p),
        "lambda0": lam0,
        "s_star": s_star,
        "tau_star": P.tau_star,
        "tau_upper": P.tau_upper,
        "sparse_eigen": rep.to_dict(),
    }


# -- bias, sign consistency, l_inf bound, rates ---------------------------------------


def predicted_dof_bias(X, S, sgn_beta_S, a0, lam: float, nu: int, n: int | None = None, F_theta: float = 1.0) -> float:
    """sqrt(F / n) (s0 - nu) <(a0)_S, lam (X_S^T X_S / n)^{-1} sgn(beta_S)>.

    The selection bias of the nu-adjusted pivot under sign consistency is minus this value.
    """
    X = np.asarray(X, dtype=float)
    S = np.asarray(S, dtype=int)
    n = X.shape[0] if n is None else n
    XS = X[:, S]
    G = XS.T @ XS / n
    if S.size and np.linalg.cond(G) > 1e12:
        raise DegenerateFitError("X_S^T X_S is singular")
    v = np.linalg.solve(G, lam * np.asarray(sgn_beta_S, float)) if S.size else np.zeros(0)
    return float(np.sqrt(F_theta / n) * (S.size - nu) * (np.asarray(a0, float)[S] @ v))


def _inv_sqrt(M):
    w, E = np.linalg.eigh(M)
    return (E / np.sqrt(w)) @ E.T


def check_sign_consistency(cov: CovarianceSpec, S, sgn_beta_S, min_abs_beta: float, n: int, p: int,
                           gamma: float, delta: float, phi_p: float, sigma: float = 1.0, c_n=None) -> dict:
    """Sufficient conditions for sgn(beta_hat) = sgn(beta) with Gaussian design.

    C_min is min_{||u||=1} ||Sigma_SS^{-1/2} u||_2 and c_n defaults to log n.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if phi_p < 2:
        raise ValueError("phi_p must be >= 2")
    S = np.asarray(S, dtype=int)
    s0 = S.size
    sg = np.asarray(sgn_beta_S, dtype=float)
    Sc = np.setdiff1d(np.arange(cov.p), S)
    c_n = log(n) if c_n is None else c_n
    SS = cov.submatrix(S, S)
    ScS = cov.submatrix(Sc, S)
    irr = float(np.abs(ScS @ np.linalg.solve(SS, sg)).max(initial=0.0))
    cond_var = cov.diag()[Sc] - np.einsum("ij,ij->i", ScS, np.linalg.solve(SS, ScS.T).T)
    rho = float(cond_var.max(initial=0.0))
    R = _inv_sqrt(SS)
    C_min = float(np.linalg.svd(R, compute_uv=False).min())
    lam = float(sigma / gamma * np.sqrt(phi_p * rho * 2 / n * log(p)))
    ss = rho / (C_min * gamma ** 2) * (2 * s0 / n) * log(p - s0) + log(p - s0) / (phi_p * log(p))
    inf_norm_sq = float(np.abs(R).sum(axis=1).max()) ** 2
    beta_min = (1 + c_n / sqrt(n)) * lam * inf_norm_sq + 20 * sqrt(sigma ** 2 * log(max(s0, 1)) / (C_min * n))
    C_beta = float(np.linalg.norm(R @ sg) / sqrt(s0))
    clauses = [
        _clause("irrepresentability", irr, 1 - gamma, irr <= 1 - gamma, 1 - gamma - irr),
        _clause("sample_size", ss, 1 - delta, ss < 1 - delta, 1 - delta - ss),
        _clause("beta_min", min_abs_beta, beta_min, min_abs_beta >= beta_min, min_abs_beta - beta_min),
    ]
    return {
        "clauses": clauses,
        "all_pass": all(c["pass"] for c in clauses),
        "lambda": lam,
        "rho": rho,
        "C_min": C_min,
        "C_beta": C_beta,
        "irrepresentable_lhs": irr,
    }


def linf_bound(cov: CovarianceSpec, lam: float, lambda0: float, n: int, p: int, s_star: int,
               M5: float, M_bar: float = 1.0, sigma: float = 1.0):
    """Per-coordinate bound on |beta_hat_j - beta_j| and its rho(Sigma) global form.

    per_j = [M5^2 ||Sigma^{-1} e_j||_1 lam + sigma ||Sigma^{-1/2} e_j||_2 sqrt(log p / n)
             (2 M5 + 3 M_bar lambda0 sqrt(s*))] / (1 - s*/n)
    """
    if s_star >= n:
        raise ValueError("s_star must be < n")
    if not (M5 > 0 and M_bar > 0):
        raise ValueError("M5 and M_bar must be positive")
    l1 = cov.inv_col_l1()
    l2 = np.sqrt(cov.inv_diag())
    shrink = 1 - s_star / n
    rt = sigma * sqrt(log(p) / n)
    per_j = (M5 ** 2 * l1 * lam + l2 * rt * (2 * M5 + 3 * M_bar * lambda0 * sqrt(s_star))) / shrink
    rho = float(l1.max())
    glob = rho * (M5 ** 2 + 2 * M5 + 4 * M_bar * lambda0 * sqrt(s_star)) / shrink * max(lam, rt)
    return per_j, glob


def rates(s0: float, s_omega: float, rho: float, n: int, p: int, C0_u0_l1=None, cov=None, a0=None) -> dict:
    """Lower and upper estimation rates for theta and the l1/l2 ratio of Sigma^{-1} a0.

    C0 ||u0||_1 equals ||Sigma^{-1} a0||_1 / ||Sigma^{-1/2} a0||_2; it is computed from
    (cov, a0) when those are given.
    """
    for v in (s0, s_omega, rho, n, p):
        if not v > 0:
            raise ValueError("rates need positive arguments")
    K = None
    if cov is not None and a0 is not None:
        a0 = np.asarray(a0, float)
        w = cov.apply_inv(a0)
        K = float(np.abs(w).sum() / np.sqrt(a0 @ w))
        if C0_u0_l1 is None:
            C0_u0_l1 = K
    lp = log(p)
    sparse_term = min(s0, s_omega) * lp / sqrt(n)
    r_lower = min(sparse_term, max(rho, 1.02) * sqrt(lp))
    r_upper = sparse_term if C0_u0_l1 is None else min(sparse_term, C0_u0_l1 * sqrt(lp))
    return {"r_lower": r_lower, "r_upper": r_upper, "K_condition": K}


def stein_terms(problem, fit):
    """(eps^T X (beta_hat - beta) / sigma^2, |S_hat|) for one replication."""
    t = problem.truth
    if t is None:
        raise ValueError("replication carries no ground truth")
    inner = float(t.noise @ (problem.X @ (fit.beta_hat - t.beta))) / t.sigma ** 2
    return inner, fit.nu


def stein_dof_check(records) -> dict:
    """Mean of eps^T X (beta_hat - beta) / sigma^2 against mean |S_hat|.

    Items are (problem, fit) pairs, objects with ``stein_inner`` and ``shat``
    attributes, or mappings with "inner" and "shat" keys.
    """
    inner, shat = [], []
    for rec in records:
        if isinstance(rec, tuple):
            a, b = stein_terms(*rec)
        elif isinstance(rec, dict):
            a, b = rec["inner"], rec["shat"]
        else:
            a, b = rec.stein_inner, rec.shat
        if a is None or not np.isfinite(a):
            raise ValueError("replication carries no ground truth")
        inner.append(a)
        shat.append(b)
    if not inner:
        raise ValueError("no replications")
    mi, ms = float(np.mean(inner)), float(np.mean(shat))
    return {"mean_inner": mi, "mean_shat": ms, "ratio": mi / ms if ms > 0 else float("nan"),
            "R": len(inner)}
