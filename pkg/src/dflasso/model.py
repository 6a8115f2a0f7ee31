"""Regression problems with Gaussian design, structured covariances and target directions.

Covariances are stored either densely (``explicit``) or as an identity plus a
low-rank symmetric update of the *inverse* (``identity``, ``rank1inv``), which keeps
sampling, solves and sub-blocks at O(p) or O(p^2) without forming p x p inverses.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .exceptions import CovarianceError

EIG_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Population covariance of the design rows.

    kind
        ``identity``: Sigma = I_p.
        ``rank1inv``: Sigma^{-1} = I + c (s e_j^T + e_j s^T), s a sign vector.
        ``explicit``: Sigma given as a dense symmetric matrix.

    For ``rank1inv`` the sign vector may be left unbound (``s=None``); it is then
    bound to sgn(beta) at problem generation, as in the correlated-design experiment.
    """

    kind: str
    p: int
    j: int | None = None
    c: float = 0.0
    s: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "rank1inv", "explicit"):
            raise CovarianceError(f"unknown covariance kind {self.kind!r}")
        if self.p < 1:
            raise CovarianceError("p must be positive")
        if self.kind == "rank1inv":
            if self.j is None or not 0 <= self.j < self.p:
                raise CovarianceError(f"index j={self.j} out of range for p={self.p}")
            if self.s is not None:
                s = np.asarray(self.s, dtype=float)
                if s.shape != (self.p,):
                    raise CovarianceError("sign vector must have length p")
                object.__setattr__(self, "s", s)
                self._lowrank  # eager SPD check
        if self.kind == "explicit":
            M = np.asarray(self.matrix, dtype=float)
            if M.shape != (self.p, self.p):
                raise CovarianceError("explicit covariance must be p x p")
            if not np.allclose(M, M.T, atol=1e-12, rtol=0):
                raise CovarianceError("explicit covariance must be symmetric")
            object.__setattr__(self, "matrix", M)
            self._eig

    # -- constructors ---------------------------------------------------------

    @classmethod
    def identity(cls, p: int) -> CovarianceSpec:
        return cls("identity", p)

    @classmethod
    def rank1inv(cls, p: int, j: int, c: float, s=None) -> CovarianceSpec:
        return cls("rank1inv", p, j=j, c=float(c), s=s)

    @classmethod
    def explicit(cls, matrix) -> CovarianceSpec:
        M = np.asarray(matrix, dtype=float)
        return cls("explicit", M.shape[0], matrix=M)

    @property
    def bound(self) -> bool:
        return self.kind != "rank1inv" or self.s is not None

    def bind(self, s) -> CovarianceSpec:
        """Return the spec with the rank1inv sign vector set to ``s``."""
        if self.kind != "rank1inv":
            return self
        return replace(self, s=np.asarray(s, dtype=float))

    # -- internal factorizations ----------------------------------------------

    def _require_bound(self):
        if not self.bound:
            raise CovarianceError("rank1inv covariance has no sign vector bound yet")

    @cached_property
    def _lowrank(self):
        # Sigma^{-1} = I + V B V^T with V orthonormal (p x r); G = I + B.
        self._require_bound()
        p = self.p
        if self.kind == "identity" or self.c == 0.0:
            V = np.zeros((p, 0))
            B = np.zeros((0, 0))
        else:
            U = np.zeros((p, 2))
            U[:, 0] = self.s
            U[self.j, 1] = 1.0
            M = np.array([[0.0, self.c], [self.c, 0.0]])
            Uq, sv, _ = np.linalg.svd(U, full_matrices=False)
            r = int(np.sum(sv > 1e-12 * sv[0]))
            V = Uq[:, :r]
            W = V.T @ U
            B = W @ M @ W.T
            B = 0.5 * (B + B.T)
        r = V.shape[1]
        g, E = np.linalg.eigh(np.eye(r) + B)
        if r and g.min() <= EIG_FLOOR:
            raise CovarianceError(
                f"Sigma^-1 is not positive definite (smallest eigenvalue {g.min():.3g})"
            )
        return V, B, g, E

    @cached_property
    def _eig(self):
        w, E = np.linalg.eigh(self.matrix)
        if w.min() < EIG_FLOOR:
            raise CovarianceError(
                f"covariance is not positive definite (smallest eigenvalue {w.min():.3g})"
            )
        return w, E

    def _small_fn(self, f):
        # f applied to G = I + B, minus identity, in the small basis
        _, _, g, E = self._lowrank
        return (E * (f(g) - 1.0)) @ E.T

    # -- linear algebra --------------------------------------------------------

    def apply(self, v):
        """Sigma @ v (v may be a vector or a p x k matrix)."""
        v = np.asarray(v, dtype=float)
        if self.kind == "explicit":
            return self.matrix @ v
        V = self._lowrank[0]
        return v + V @ (self._small_fn(lambda g: 1.0 / g) @ (V.T @ v))

    def apply_inv(self, v):
        """Sigma^{-1} @ v."""
        v = np.asarray(v, dtype=float)
        if self.kind == "explicit":
            w, E = self._eig
            return E @ ((E.T @ v).T / w).T
        V, B, _, _ = self._lowrank
        return v + V @ (B @ (V.T @ v))

    def inv_quad(self, a) -> float:
        """<a, Sigma^{-1} a>."""
        a = np.asarray(a, dtype=float)
        return float(a @ self.apply_inv(a))

    def sample_rows(self, Z):
        """Map iid standard rows Z (n x p) to rows with covariance Sigma: Z Sigma^{1/2}."""
        if self.kind == "explicit":
            w, E = self._eig
            return ((Z @ E) * np.sqrt(w)) @ E.T
        V = self._lowrank[0]
        if V.shape[1] == 0:
            return np.array(Z, dtype=float)
        return Z + (Z @ V) @ self._small_fn(lambda g: g ** -0.5) @ V.T

    def dense(self):
        if self.kind == "explicit":
            return self.matrix.copy()
        return self.apply(np.eye(self.p))

    def dense_inv(self):
        return self.apply_inv(np.eye(self.p))

    def submatrix(self, rows, cols):
        """Sigma[rows][:, cols] without forming Sigma."""
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        if self.kind == "explicit":
            return self.matrix[np.ix_(rows, cols)]
        out = (rows[:, None] == cols[None, :]).astype(float)
        V = self._lowrank[0]
        if V.shape[1]:
            out += V[rows] @ self._small_fn(lambda g: 1.0 / g) @ V[cols].T
        return out

    def diag(self):
        if self.kind == "explicit":
            return np.diag(self.matrix).copy()
        V = self._lowrank[0]
        K = self._small_fn(lambda g: 1.0 / g)
        return 1.0 + np.einsum("ij,jk,ik->i", V, K, V)

    def inv_diag(self):
        """Diagonal of Sigma^{-1}; entry j is ||Sigma^{-1/2} e_j||_2^2."""
        if self.kind == "explicit":
            w, E = self._eig
            return (E ** 2) @ (1.0 / w)
        V, B, _, _ = self._lowrank
        return 1.0 + np.einsum("ij,jk,ik->i", V, B, V)

    def inv_col_l1(self, chunk: int = 512):
        """||Sigma^{-1} e_j||_1 for every j."""
        out = np.empty(self.p)
        for start in range(0, self.p, chunk):
            idx = np.arange(start, min(start + chunk, self.p))
            E = np.zeros((self.p, idx.size))
            E[idx, np.arange(idx.size)] = 1.0
            out[idx] = np.abs(self.apply_inv(E)).sum(axis=0)
        return out

    def min_eig(self) -> float:
        if self.kind == "explicit":
            return float(self._eig[0].min())
        g = self._lowrank[2]
        # eigenvalues of Sigma are 1 off span(V), 1/g on it
        vals = 1.0 / g
        if self._lowrank[0].shape[1] < self.p:
            vals = np.append(vals, 1.0)
        return float(vals.min())

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "p": self.p}
        if self.kind == "rank1inv":
            d["j"] = self.j
            d["c"] = self.c
            d["s"] = None if self.s is None else self.s.tolist()
        if self.kind == "explicit":
            d["matrix"] = self.matrix.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CovarianceSpec:
        kind = d.get("kind")
        if kind == "identity":
            return cls.identity(int(d["p"]))
        if kind == "rank1inv":
            return cls.rank1inv(int(d["p"]), int(d["j"]), float(d["c"]), d.get("s"))
        if kind == "explicit":
            return cls.explicit(d["matrix"])
        raise CovarianceError(f"unknown covariance kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Truth:
    beta: np.ndarray
    sigma: float
    support: np.ndarray
    noise: np.ndarray
    cov: CovarianceSpec


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    X: np.ndarray
    y: np.ndarray
    truth: Truth | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class TargetFunctional:
    a0: np.ndarray
    label: str = ""

    def __post_init__(self):
        a0 = np.asarray(self.a0, dtype=float)
        if not np.linalg.norm(a0) > 0:
            raise ValueError("target direction a0 must be nonzero")
        object.__setattr__(self, "a0", a0)

    def theta(self, beta) -> float:
        return float(self.a0 @ beta)

    def scaled(self, c: float) -> TargetFunctional:
        return TargetFunctional(c * self.a0, self.label)


@dataclass(frozen=True)
class BetaSpec:
    """Coefficient vector recipe: support, amplitudes and a sign rule (``fixed`` or ``random``)."""

    support: tuple[int, ...]
    amplitude: float | tuple[float, ...] = 1.0
    signs: str = "random"
    fixed_signs: tuple[int, ...] | None = None

    def draw(self, p: int, rng: np.random.Generator) -> np.ndarray:
        S = np.asarray(self.support, dtype=int)
        if S.size and (S.min() < 0 or S.max() >= p):
            raise ValueError("support index out of range")
        amp = np.broadcast_to(np.asarray(self.amplitude, dtype=float), S.shape)
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes must be finite")
        if self.signs == "random":
            sg = rng.choice(np.array([-1.0, 1.0]), size=S.size)
        elif self.signs == "fixed":
            sg = np.ones(S.size) if self.fixed_signs is None else np.asarray(self.fixed_signs, float)
        else:
            raise ValueError(f"unknown sign rule {self.signs!r}")
        beta = np.zeros(p)
        beta[S] = sg * amp
        return beta


def generate_problem(
    cov: CovarianceSpec,
    beta_spec: BetaSpec,
    sigma: float,
    n: int,
    seed: int,
    design: str = "gaussian",
) -> RegressionProblem:
    """Draw (X, y) with iid N(0, Sigma) rows and y = X beta + N(0, sigma^2) noise.

    Draw order is fixed (signs, design, noise) so results depend on ``seed`` only.
    An unbound ``rank1inv`` covariance is bound to sgn(beta) before sampling X.
    ``design="rademacher"`` replaces the standard normal draws by +-1 entries.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    p = cov.p
    beta = beta_spec.draw(p, rng)
    if not cov.bound:
        cov = cov.bind(np.sign(beta))
    if design == "gaussian":
        Z = rng.standard_normal((n, p))
    elif design == "rademacher":
        Z = rng.choice(np.array([-1.0, 1.0]), size=(n, p))
    else:
        raise ValueError(f"unknown design {design!r}")
    X = np.asfortranarray(cov.sample_rows(Z))
    eps = sigma * rng.standard_normal(n)
    y = X @ beta + eps
    truth = Truth(beta=beta, sigma=float(sigma), support=np.flatnonzero(beta), noise=eps, cov=cov)
    return RegressionProblem(X=X, y=y, truth=truth)


def direction_sgn_beta(
    beta, cov: CovarianceSpec, normalize: bool = True, rule: str = "sgn"
) -> TargetFunctional:
    """Direction supported on supp(beta) and proportional to sgn(beta).

    rule="sgn": a0 = sgn(beta)_S scaled to ||Sigma^{-1/2} a0||_2 = 1 (``normalize``) or
    to unit Euclidean norm.  rule="sigma": a0 = Sigma sgn(beta)_S / sqrt(s0).
    """
    beta = np.asarray(beta, dtype=float)
    sg = np.sign(beta)
    s0 = int(np.count_nonzero(sg))
    if s0 == 0:
        raise ValueError("beta must be nonzero")
    if rule == "sigma":
        return TargetFunctional(cov.apply(sg) / np.sqrt(s0), "Sigma sgn(beta)/sqrt(s0)")
    if rule != "sgn":
        raise ValueError(f"unknown rule {rule!r}")
    if normalize:
        return TargetFunctional(sg / np.sqrt(cov.inv_quad(sg)), "sgn(beta), Sigma-normalized")
    return TargetFunctional(sg / np.sqrt(s0), "sgn(beta)/sqrt(s0)")


def direction_canonical(j: int, cov: CovarianceSpec, scaled: bool = False) -> TargetFunctional:
    """a0 = e_j, or e_j / (Sigma^{-1})_jj when ``scaled``."""
    if not 0 <= j < cov.p:
        raise IndexError(f"index {j} out of range for p={cov.p}")
    a0 = np.zeros(cov.p)
    a0[j] = 1.0
    if scaled:
        e = np.zeros(cov.p)
        e[j] = 1.0
        a0 = a0 / cov.apply_inv(e)[j]
    return TargetFunctional(a0, f"e_{j}" + (" scaled" if scaled else ""))
