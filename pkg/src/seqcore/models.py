"""Ridge, Lasso, Logistic and Gaussian-mixture loss models."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .core import ContractError, Dataset, LossModel, NumericError, ParameterError, exact_sum

__all__ = [
    "RidgeModel",
    "LassoModel",
    "LogisticModel",
    "GmmModel",
    "SmoothnessConstants",
    "smoothness_constants",
    "lp_norm",
    "soft_threshold",
]


def lp_norm(beta: np.ndarray, p: float) -> float:
    a = np.abs(beta)
    if p == 1:
        return float(a.sum())
    if p == 2:
        return float(np.sqrt(a @ a))
    return float(np.sum(a**p) ** (1.0 / p))


def soft_threshold(v, t):
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _linear_grad_norms(coef, dot, sq_norms, lam, beta):
    # ||c_i x_i + 2 lam beta||, expanded so no n x d matrix is formed
    sq = coef * coef * sq_norms + 4.0 * lam * coef * dot + 4.0 * lam * lam * float(beta @ beta)
    return np.sqrt(np.maximum(sq, 0.0))


@dataclass(frozen=True)
class RidgeModel(LossModel):
    """f_i = (<x_i, beta> - y_i)^2 + lam * ||beta||^2."""

    lam: float = 0.01
    name = "ridge"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")

    def losses(self, beta, X, y):
        r = X @ beta - y
        return r * r + self.lam * float(beta @ beta)

    def grads(self, beta, X, y):
        r = X @ beta - y
        return 2.0 * r[:, None] * X + 2.0 * self.lam * beta

    def mean_grad(self, beta, X, y, w):
        r = X @ beta - y
        return 2.0 * (X.T @ (w * r)) / exact_sum(w) + 2.0 * self.lam * beta

    def grad_norms(self, beta, dataset):
        dot = dataset.features @ beta
        r = dot - dataset.responses
        return _linear_grad_norms(2.0 * r, dot, dataset.row_sq_norms, self.lam, beta)

    def lipschitz(self, dataset, beta=None):
        return 2.0 * float(dataset.row_sq_norms.max()) + 2.0 * self.lam


@dataclass(frozen=True)
class LassoModel(LossModel):
    """f_i = g_i + lam * ||beta||_p with g_i = (<x_i, beta> - y_i)^2 and 0 < p <= 2.

    The penalty is carried in every per-point loss so that layering sees the
    full objective; the proximal host works on ``smooth_*`` and ``penalty``
    separately.
    """

    lam: float = 0.01
    p: float = 1.0
    name = "lasso"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")
        if not 0 < self.p <= 2:
            raise ParameterError(f"p must lie in (0, 2], got {self.p}")

    def penalty(self, beta) -> float:
        return self.lam * lp_norm(np.asarray(beta, float), self.p)

    def penalty_subgradient(self, beta) -> np.ndarray:
        """Gradient of lam*||beta||_p, selecting 0 on zero coordinates."""
        beta = np.asarray(beta, float)
        if self.p == 1:
            return self.lam * np.sign(beta)
        norm = lp_norm(beta, self.p)
        if norm == 0:
            return np.zeros_like(beta)
        return self.lam * np.sign(beta) * np.abs(beta) ** (self.p - 1) / norm ** (self.p - 1)

    def holder_term(self, d: int) -> float:
        return self.lam * d ** (1.0 / self.p - 0.5)

    def smooth_losses(self, beta, X, y):
        r = X @ beta - y
        return r * r

    def smooth_mean_grad(self, beta, X, y, w):
        r = X @ beta - y
        return 2.0 * (X.T @ (w * r)) / exact_sum(w)

    def losses(self, beta, X, y):
        return self.smooth_losses(beta, X, y) + self.penalty(beta)

    def grads(self, beta, X, y):
        r = X @ beta - y
        return 2.0 * r[:, None] * X + self.penalty_subgradient(beta)

    def mean_grad(self, beta, X, y, w):
        return self.smooth_mean_grad(beta, X, y, w) + self.penalty_subgradient(beta)

    def grad_norms(self, beta, dataset):
        r = dataset.features @ beta - dataset.responses
        smooth = 2.0 * np.abs(r) * np.sqrt(dataset.row_sq_norms)
        return smooth + self.holder_term(dataset.d)

    def lipschitz(self, dataset, beta=None):
        return 2.0 * float(dataset.row_sq_norms.max())


@dataclass(frozen=True)
class LogisticModel(LossModel):
    """Binary cross-entropy on responses in {0, 1}, optional lam*||beta||^2."""

    lam: float = 0.0
    name = "logistic"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")

    @staticmethod
    def _check_y(y):
        if np.any((y != 0) & (y != 1)):
            raise ContractError("logistic responses must be 0 or 1")

    def losses(self, beta, X, y):
        self._check_y(y)
        t = X @ beta
        return np.logaddexp(0.0, t) - y * t + self.lam * float(beta @ beta)

    def grads(self, beta, X, y):
        self._check_y(y)
        c = expit(X @ beta) - y
        return c[:, None] * X + 2.0 * self.lam * beta

    def mean_grad(self, beta, X, y, w):
        self._check_y(y)
        c = expit(X @ beta) - y
        return (X.T @ (w * c)) / exact_sum(w) + 2.0 * self.lam * beta

    def grad_norms(self, beta, dataset):
        dot = dataset.features @ beta
        c = expit(dot) - dataset.responses
        return _linear_grad_norms(c, dot, dataset.row_sq_norms, self.lam, beta)

    def lipschitz(self, dataset, beta=None):
        return 0.25 * float(dataset.row_sq_norms.max()) + 2.0 * self.lam


@dataclass(frozen=True)
class GmmModel(LossModel):
    """Negative log-likelihood of a k-component Gaussian mixture in R^D.

    The hypothesis is the flat concatenation of per-component blocks
    ``[omega_j, mu_j (D), P_j (D*D, row-major)]`` where ``P_j`` is the
    precision matrix. Eigenvalues of every precision are kept inside
    ``[eig_floor, 1/eig_floor]``.
    """

    k: int = 3
    D: int = 2
    eig_floor: float = 1e-2
    name = "gmm"

    def __post_init__(self):
        if self.k < 1 or self.D < 1:
            raise ParameterError("k and D must be >= 1")
        if not 0 < self.eig_floor <= 1:
            raise ParameterError(f"eig_floor must lie in (0, 1], got {self.eig_floor}")

    @property
    def block(self) -> int:
        return 1 + self.D + self.D * self.D

    def dim(self, dataset=None) -> int:
        if dataset is not None and dataset.d != self.D:
            raise ContractError(f"GMM expects D={self.D} features, dataset has {dataset.d}")
        return self.k * self.block

    def unpack(self, beta):
        B = np.asarray(beta, float).reshape(self.k, self.block)
        D = self.D
        return B[:, 0], B[:, 1 : 1 + D], B[:, 1 + D :].reshape(self.k, D, D)

    def pack(self, omega, mu, prec) -> np.ndarray:
        k, D = self.k, self.D
        return np.hstack(
            [np.reshape(omega, (k, 1)), np.reshape(mu, (k, D)), np.reshape(prec, (k, D * D))]
        ).ravel()

    def clamp_precision(self, prec: np.ndarray) -> np.ndarray:
        lo, hi = self.eig_floor, 1.0 / self.eig_floor
        out = np.empty_like(prec)
        for j, P in enumerate(prec):
            vals, vecs = np.linalg.eigh(0.5 * (P + P.T))
            out[j] = (vecs * np.clip(vals, lo, hi)) @ vecs.T
        return out

    def precision_from_cov(self, cov: np.ndarray) -> np.ndarray:
        """Invert covariances after clamping their eigenvalues (the range is closed under inversion)."""
        lo, hi = self.eig_floor, 1.0 / self.eig_floor
        out = np.empty_like(cov)
        for j, C in enumerate(cov):
            vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
            out[j] = (vecs / np.clip(vals, lo, hi)) @ vecs.T
        return out

    def _log_joint(self, beta, X):
        """log(omega_j) + log N(x_i | mu_j, P_j^-1), shape (m, k); plus the diffs."""
        omega, mu, prec = self.unpack(beta)
        sign, logdet = np.linalg.slogdet(prec)
        if np.any(sign <= 0):
            raise NumericError("precision block is not positive definite")
        diff = X[:, None, :] - mu[None, :, :]
        quad = np.einsum("mkd,kde,mke->mk", diff, prec, diff)
        with np.errstate(divide="ignore"):
            log_w = np.log(omega)
        log_n = -0.5 * self.D * math.log(2 * math.pi) + 0.5 * logdet - 0.5 * quad
        return log_w + log_n, diff

    def responsibilities(self, beta, X) -> np.ndarray:
        lj, _ = self._log_joint(beta, X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, beta, X) -> np.ndarray:
        lj, _ = self._log_joint(beta, X)
        return np.argmax(lj, axis=1)

    def losses(self, beta, X, y=None):
        lj, _ = self._log_joint(beta, X)
        return -logsumexp(lj, axis=1)

    def grads(self, beta, X, y=None):
        omega, mu, prec = self.unpack(beta)
        lj, diff = self._log_joint(beta, X)
        lse = logsumexp(lj, axis=1, keepdims=True)
        gamma = np.exp(lj - lse)
        # p_ij / sum_l omega_l p_il, finite even when omega_j == 0
        with np.errstate(divide="ignore"):
            ratio = np.exp(lj - np.log(omega)[None, :] - lse)
        ratio = np.where(omega[None, :] > 0, ratio, 0.0)
        cov = np.linalg.inv(prec)
        m = X.shape[0]
        out = np.empty((m, self.k, self.block))
        out[:, :, 0] = -ratio
        out[:, :, 1 : 1 + self.D] = -gamma[:, :, None] * np.einsum("kde,mke->mkd", prec, diff)
        outer = diff[:, :, :, None] * diff[:, :, None, :]
        dprec = -0.5 * gamma[:, :, None, None] * (np.transpose(cov, (0, 2, 1))[None] - outer)
        out[:, :, 1 + self.D :] = dprec.reshape(m, self.k, self.D * self.D)
        return out.reshape(m, self.k * self.block)

    def data_radius(self, beta, X) -> float:
        _, mu, _ = self.unpack(beta)
        return float(np.sqrt(((X[:, None, :] - mu[None]) ** 2).sum(-1).max()))

    def lipschitz(self, dataset, beta=None, radius: float | None = None):
        """Bound on ||grad f_i|| over semi-spherical mixtures within ``radius`` of the data.

        The density-ratio term uses min p >= (lam/2pi)^(D/2) exp(-r^2/(2 lam))
        and max p <= (2 pi lam)^(-D/2). Overflow yields ``inf``.
        """
        if radius is None:
            if beta is None:
                raise ContractError("GMM Lipschitz bound needs an anchor or a radius")
            radius = self.data_radius(beta, dataset.features)
        lam, r, D = self.eig_floor, float(radius), self.D
        log_ratio = -D * math.log(lam) + r * r / (2 * lam)
        ratio_sq = math.exp(2 * log_ratio) if 2 * log_ratio < 700 else math.inf
        total = ratio_sq + (r / lam) ** 2 + (math.sqrt(D) / lam + r * r) ** 2
        return math.sqrt(self.k * total)

    def init_hypothesis(self, dataset, seed=0):
        """k-means++ seeded means, uniform weights, isotropic precisions."""
        X = dataset.features
        self.dim(dataset)
        rng = np.random.default_rng(seed)
        n = X.shape[0]
        centers = [X[rng.integers(n)]]
        d2 = ((X - centers[0]) ** 2).sum(1)
        for _ in range(1, self.k):
            total = d2.sum()
            i = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
            centers.append(X[i])
            d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(1))
        var = float(X.var(axis=0).mean()) or 1.0
        prec = np.repeat(np.eye(self.D)[None] / var, self.k, axis=0)
        return self.pack(np.full(self.k, 1.0 / self.k), np.array(centers), self.clamp_precision(prec))

    def is_valid(self, beta, tol: float = 1e-9) -> bool:
        beta = np.asarray(beta, float)
        if beta.shape != (self.k * self.block,) or not np.isfinite(beta).all():
            return False
        omega, _, prec = self.unpack(beta)
        if (omega < 0).any() or abs(omega.sum() - 1.0) > tol:
            return False
        for P in prec:
            if not np.allclose(P, P.T, atol=1e-9 * max(1.0, np.abs(P).max())):
                return False
            if np.linalg.eigvalsh(0.5 * (P + P.T)).min() <= 0:
                return False
        return True


@dataclass(frozen=True)
class SmoothnessConstants:
    L: float
    M: float
    M_bar: float
    M_prime_bound: float
    grad_norms: np.ndarray

    def as_dict(self) -> dict:
        return {"L": self.L, "M": self.M, "M_bar": self.M_bar, "M_prime_bound": self.M_prime_bound}


def smoothness_constants(model: LossModel, dataset: Dataset, beta_anc, R: float) -> SmoothnessConstants:
    """L, M = max_i ||grad f_i(anchor)||, its mean, and the bound M' <= M + L*R."""
    if dataset.n < 1:
        raise ParameterError("empty dataset")
    if R < 0:
        raise ParameterError(f"R must be >= 0, got {R}")
    beta_anc = model.check_beta(beta_anc, dataset)
    norms = model.grad_norms(beta_anc, dataset)
    L = float(model.lipschitz(dataset, beta_anc))
    M = float(norms.max())
    return SmoothnessConstants(
        L=L,
        M=M,
        M_bar=exact_sum(norms) / dataset.n,
        M_prime_bound=M + L * R,
        grad_norms=norms,
    )
