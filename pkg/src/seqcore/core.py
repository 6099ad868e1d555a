"""Datasets, coreset weight vectors, and the empirical-risk evaluators.

Every loss model implements :class:`LossModel`; the evaluators in this module
(``full_risk``, ``weighted_risk``, ``weighted_gradient``) are the only places
where per-point losses are reduced to a scalar risk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

__all__ = [
    "ContractError",
    "NumericError",
    "ParameterError",
    "Dataset",
    "Coreset",
    "LossModel",
    "exact_sum",
    "full_risk",
    "weighted_risk",
    "weighted_gradient",
]


class ContractError(ValueError):
    """Inputs violate a documented precondition (shapes, lengths, domains)."""


class ParameterError(ValueError):
    """A scalar configuration parameter is outside its valid range."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def exact_sum(values) -> float:
    """Correctly rounded sum; independent of the order of ``values``."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """n labelled points in d dimensions. Arrays are copied and made read-only."""

    features: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractError(f"features must be a non-empty n x d matrix, got shape {X.shape}")
        y = np.asarray(self.responses, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ContractError(
                f"features have {X.shape[0]} rows but responses have {y.shape[0]} entries"
            )
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ContractError("dataset contains non-finite entries")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "responses", _frozen(y))
        object.__setattr__(self, "_sq_norms", None)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def row_sq_norms(self) -> np.ndarray:
        if self._sq_norms is None:
            object.__setattr__(self, "_sq_norms", _frozen(np.einsum("ij,ij->i", self.features, self.features)))
        return self._sq_norms

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.responses[index])


Provenance = Literal["layered", "uniform", "importance", "full"]


@dataclass(frozen=True, eq=False)
class Coreset:
    """Length-n nonnegative weight vector; the support holds the non-zero entries."""

    weights: np.ndarray
    provenance: Provenance = "layered"
    support: np.ndarray = field(init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size < 1:
            raise ContractError("coreset weight vector is empty")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ContractError("coreset weights must be finite and nonnegative")
        object.__setattr__(self, "weights", _frozen(w))
        support = np.flatnonzero(w > 0)
        support.setflags(write=False)
        object.__setattr__(self, "support", support)

    @classmethod
    def full(cls, n: int) -> "Coreset":
        return cls(np.ones(n), provenance="full")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def size(self) -> int:
        return int(self.support.shape[0])

    @property
    def total_weight(self) -> float:
        return exact_sum(self.weights[self.support])

    def sample(self, dataset: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Features, responses and weights restricted to the support.

        A full support returns the dataset arrays themselves (no copy), so that
        evaluations over a full-weight coreset follow the same arithmetic as
        the uncompressed problem.
        """
        if self.n != dataset.n:
            raise ContractError(f"coreset has length {self.n}, dataset has {dataset.n} points")
        key = id(dataset)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is dataset:
            return hit[1]
        if self.size == self.n:
            out = (dataset.features, dataset.responses, self.weights)
        else:
            s = self.support
            out = (dataset.features[s], dataset.responses[s], self.weights[s])
        self._cache.clear()
        self._cache[key] = (dataset, out)
        return out


class LossModel:
    """Per-point loss contract shared by all models.

    Subclasses implement ``losses`` and ``grads`` on row blocks; the remaining
    methods have generic defaults that subclasses override when a cheaper
    closed form exists.
    """

    name = "model"

    def dim(self, dataset: Dataset) -> int:
        return dataset.d

    def check_beta(self, beta, dataset: Dataset) -> np.ndarray:
        beta = np.asarray(beta, dtype=np.float64)
        p = self.dim(dataset)
        if beta.shape != (p,):
            raise ContractError(f"hypothesis has shape {beta.shape}, expected ({p},)")
        if not np.isfinite(beta).all():
            raise ContractError("hypothesis has non-finite coordinates")
        return beta

    def losses(self, beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grads(self, beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mean_grad(self, beta, X, y, w) -> np.ndarray:
        return (w @ self.grads(beta, X, y)) / exact_sum(w)

    def loss(self, beta, x, y) -> float:
        return float(self.losses(np.asarray(beta, float), np.atleast_2d(x), np.atleast_1d(y))[0])

    def grad(self, beta, x, y) -> np.ndarray:
        return self.grads(np.asarray(beta, float), np.atleast_2d(x), np.atleast_1d(y))[0]

    def grad_norms(self, beta, dataset: Dataset) -> np.ndarray:
        """Per-point ||grad f_i(beta)|| used for the M and M-bar constants."""
        return np.linalg.norm(self.grads(beta, dataset.features, dataset.responses), axis=1)

    def lipschitz(self, dataset: Dataset, beta=None) -> float:
        raise NotImplementedError

    def init_hypothesis(self, dataset: Dataset, seed: int = 0) -> np.ndarray:
        return np.zeros(self.dim(dataset))

    def is_valid(self, beta) -> bool:
        return bool(np.isfinite(beta).all())


def _checked_losses(model: LossModel, beta, X, y, index=None) -> np.ndarray:
    vals = model.losses(beta, X, y)
    bad = ~np.isfinite(vals)
    if bad.any():
        pos = int(np.flatnonzero(bad)[0])
        i = int(index[pos]) if index is not None else pos
        raise NumericError(f"non-finite loss at point {i}", index=i)
    return vals


def full_risk(dataset: Dataset, model: LossModel, beta) -> float:
    """Mean per-point loss over the whole dataset."""
    beta = model.check_beta(beta, dataset)
    vals = _checked_losses(model, beta, dataset.features, dataset.responses)
    return exact_sum(vals) / dataset.n


def weighted_risk(dataset: Dataset, model: LossModel, coreset: Coreset, beta) -> float:
    """Weighted mean of per-point losses over the coreset support."""
    beta = model.check_beta(beta, dataset)
    X, y, w = coreset.sample(dataset)
    vals = _checked_losses(model, beta, X, y, index=coreset.support)
    return exact_sum(w * vals) / exact_sum(w)


def weighted_gradient(dataset: Dataset, model: LossModel, coreset: Coreset, beta) -> np.ndarray:
    """Weighted mean of per-point gradients over the coreset support."""
    beta = model.check_beta(beta, dataset)
    X, y, w = coreset.sample(dataset)
    g = model.mean_grad(beta, X, y, w)
    if not np.isfinite(g).all():
        raise NumericError("non-finite gradient")
    return g
