"""Host algorithms that run on a weighted (coreset) objective.

Each stepper takes one step from ``beta`` and reports whether the objective
has become stable. Steppers are stateless: the iteration counter for
diminishing schedules is passed in. An optional ``ball=(center, radius)``
keeps every accepted iterate inside the region where the coreset is valid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .core import Coreset, Dataset, LossModel, NumericError, ParameterError, exact_sum, weighted_gradient, weighted_risk
from .models import GmmModel, LassoModel, lp_norm, soft_threshold

__all__ = [
    "HostConfig",
    "StepOutcome",
    "HostRun",
    "gd_step",
    "prox_step",
    "subgradient_step",
    "em_step",
    "default_stepper",
    "run_host",
]


@dataclass(frozen=True)
class HostConfig:
    step_size: float | Literal["backtracking"] = "backtracking"
    init_step: float = 1.0
    max_iters: int = 5000
    grad_tol: float = 1e-6
    rel_loss_tol: float = 1e-10
    armijo_c: float = 1e-4
    max_halvings: int = 60

    def __post_init__(self):
        if self.step_size != "backtracking" and not (isinstance(self.step_size, (int, float)) and self.step_size > 0):
            raise ParameterError("step_size must be positive or 'backtracking'")
        if self.grad_tol <= 0 or self.rel_loss_tol <= 0:
            raise ParameterError("tolerances must be positive")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")

    @property
    def backtracking(self) -> bool:
        return self.step_size == "backtracking"

    @property
    def base_step(self) -> float:
        return self.init_step if self.backtracking else float(self.step_size)


@dataclass(frozen=True)
class StepOutcome:
    beta: np.ndarray
    loss: float
    grad_norm: float
    stable: bool
    loss_before: float = math.nan
    step: float = 0.0
    reseeded: bool = False


Ball = tuple[np.ndarray, float]


def _inside(beta, ball: Ball | None) -> bool:
    if ball is None:
        return True
    center, radius = ball
    return float(np.linalg.norm(beta - center)) <= radius


def _rel_change(before: float, after: float) -> float:
    return abs(before - after) / max(abs(before), 1e-300)


def _is_stable(cfg: HostConfig, grad_norm: float, before: float, after: float) -> bool:
    return grad_norm <= cfg.grad_tol or _rel_change(before, after) <= cfg.rel_loss_tol


def gd_step(model, dataset, coreset, beta, config: HostConfig, ball: Ball | None = None, t: int = 0) -> StepOutcome:
    """Gradient step; Armijo backtracking by halving when configured."""
    beta = np.asarray(beta, float)
    f0 = weighted_risk(dataset, model, coreset, beta)
    g = weighted_gradient(dataset, model, coreset, beta)
    gn = float(np.linalg.norm(g))
    if gn <= config.grad_tol:
        return StepOutcome(beta, f0, gn, True, f0, 0.0)
    eta = config.base_step
    for _ in range(config.max_halvings + 1):
        trial = beta - eta * g
        if _inside(trial, ball):
            if not config.backtracking:
                break
            f1 = weighted_risk(dataset, model, coreset, trial)
            if f1 <= f0 - config.armijo_c * eta * gn * gn:
                return StepOutcome(trial, f1, gn, _is_stable(config, gn, f0, f1), f0, eta)
        eta *= 0.5
    else:
        # no acceptable step at machine resolution
        return StepOutcome(beta, f0, gn, True, f0, 0.0)
    f1 = weighted_risk(dataset, model, coreset, trial)
    return StepOutcome(trial, f1, gn, _is_stable(config, gn, f0, f1), f0, eta)


def _lasso_parts(model: LassoModel, dataset, coreset, beta):
    X, y, w = coreset.sample(dataset)
    smooth = exact_sum(w * model.smooth_losses(beta, X, y)) / exact_sum(w)
    grad = model.smooth_mean_grad(beta, X, y, w)
    if not (math.isfinite(smooth) and np.isfinite(grad).all()):
        raise NumericError("non-finite smooth loss or gradient")
    return smooth, grad


def prox_step(model, dataset, coreset, beta, config: HostConfig, ball: Ball | None = None, t: int = 0) -> StepOutcome:
    """Proximal gradient (ISTA) step for the l1 penalty."""
    if not isinstance(model, LassoModel):
        raise ParameterError("prox_step needs a LassoModel")
    if model.p != 1:
        return subgradient_step(model, dataset, coreset, beta, config, ball, t)
    beta = np.asarray(beta, float)
    g0, grad = _lasso_parts(model, dataset, coreset, beta)
    f0 = g0 + model.penalty(beta)
    eta = config.base_step
    for _ in range(config.max_halvings + 1):
        z = soft_threshold(beta - eta * grad, eta * model.lam)
        if _inside(z, ball):
            if not config.backtracking:
                break
            step = z - beta
            gz = exact_sum_smooth(model, dataset, coreset, z)
            if gz <= g0 + float(grad @ step) + float(step @ step) / (2 * eta):
                break
        eta *= 0.5
    else:
        return StepOutcome(beta, f0, 0.0, True, f0, 0.0)
    mapping = float(np.linalg.norm(z - beta)) / eta
    f1 = exact_sum_smooth(model, dataset, coreset, z) + model.penalty(z)
    return StepOutcome(z, f1, mapping, _is_stable(config, mapping, f0, f1), f0, eta)


def exact_sum_smooth(model: LassoModel, dataset, coreset, beta) -> float:
    X, y, w = coreset.sample(dataset)
    return exact_sum(w * model.smooth_losses(beta, X, y)) / exact_sum(w)


def subgradient_step(model, dataset, coreset, beta, config: HostConfig, ball: Ball | None = None, t: int = 0) -> StepOutcome:
    """beta - eta_t * (grad g + penalty subgradient), eta_t = step / sqrt(t + 1)."""
    beta = np.asarray(beta, float)
    f0 = weighted_risk(dataset, model, coreset, beta)
    direction = weighted_gradient(dataset, model, coreset, beta)
    dn = float(np.linalg.norm(direction))
    if dn <= config.grad_tol:
        return StepOutcome(beta, f0, dn, True, f0, 0.0)
    eta = config.base_step / math.sqrt(t + 1)
    for _ in range(config.max_halvings + 1):
        trial = beta - eta * direction
        if _inside(trial, ball):
            break
        eta *= 0.5
    else:
        return StepOutcome(beta, f0, dn, True, f0, 0.0)
    f1 = weighted_risk(dataset, model, coreset, trial)
    return StepOutcome(trial, f1, dn, _is_stable(config, dn, f0, f1), f0, eta)


def _weighted_m_step(model: GmmModel, X, w, gamma, beta):
    omega_old, mu_old, prec_old = model.unpack(beta)
    wg = w[:, None] * gamma
    Nk = wg.sum(axis=0)
    total = exact_sum(w)
    omega = Nk / total
    mu = np.array(mu_old)
    cov = np.linalg.inv(prec_old)
    empty = Nk < 1e-12 * total
    for j in range(model.k):
        if empty[j]:
            continue
        mu[j] = wg[:, j] @ X / Nk[j]
        diff = X - mu[j]
        cov[j] = (wg[:, j, None] * diff).T @ diff / Nk[j]
    prec = model.precision_from_cov(cov)
    return omega, mu, prec, empty


def em_step(model, dataset, coreset, beta, config: HostConfig, ball: Ball | None = None, t: int = 0) -> StepOutcome:
    """Weighted EM step for a GMM; coreset weights act as point multiplicities.

    A component whose effective weight vanishes is re-seeded at the worst-fit
    support point. When a ball is given the update is damped towards ``beta``
    (halving) until it lies inside and does not increase the objective.
    """
    if not isinstance(model, GmmModel):
        raise ParameterError("em_step needs a GmmModel")
    beta = np.asarray(beta, float)
    X, _, w = coreset.sample(dataset)
    f0 = weighted_risk(dataset, model, coreset, beta)
    gamma = model.responsibilities(beta, X)
    omega, mu, prec, empty = _weighted_m_step(model, X, w, gamma, beta)
    reseeded = bool(empty.any())
    if reseeded:
        worst = int(np.argmax(model.losses(beta, X)))
        for j in np.flatnonzero(empty):
            mu[j] = X[worst]
            omega[j] = 1.0 / X.shape[0]
        omega = omega / omega.sum()
    new = model.pack(omega, mu, prec)
    step = new - beta
    s = 1.0
    for _ in range(config.max_halvings + 1):
        trial = beta + s * step if s < 1.0 else new
        if _inside(trial, ball):
            f1 = weighted_risk(dataset, model, coreset, trial)
            if ball is None or reseeded or f1 <= f0:
                break
        s *= 0.5
    else:
        return StepOutcome(beta, f0, 0.0, True, f0, 0.0, reseeded)
    move = float(np.linalg.norm(trial - beta))
    stable = (not reseeded) and _rel_change(f0, f1) <= config.rel_loss_tol
    return StepOutcome(trial, f1, move, stable, f0, s, reseeded)


Stepper = Callable[..., StepOutcome]


def default_stepper(model: LossModel) -> Stepper:
    if isinstance(model, GmmModel):
        return em_step
    if isinstance(model, LassoModel):
        return prox_step if model.p == 1 else subgradient_step
    return gd_step


@dataclass
class HostRun:
    beta: np.ndarray
    iterations: int
    loss: float
    stable: bool
    losses: list[float] = field(default_factory=list)


def run_host(
    model: LossModel,
    dataset: Dataset,
    coreset: Coreset,
    beta0,
    config: HostConfig,
    stepper: Stepper | None = None,
    ball: Ball | None = None,
    t0: int = 0,
) -> HostRun:
    """Iterate a stepper on one weighted objective until stable or max_iters."""
    stepper = stepper or default_stepper(model)
    beta = model.check_beta(beta0, dataset)
    losses = []
    out = None
    for it in range(config.max_iters):
        out = stepper(model, dataset, coreset, beta, config, ball=ball, t=t0 + it)
        beta = out.beta
        losses.append(out.loss)
        if out.stable:
            return HostRun(beta, it + 1, out.loss, True, losses)
    return HostRun(beta, config.max_iters, out.loss, False, losses)
