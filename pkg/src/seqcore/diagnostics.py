"""Audits of coreset guarantees and the evaluation metrics (Error_beta, purity)."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, Coreset, Dataset, LossModel, ParameterError, full_risk, weighted_gradient, weighted_risk
from .coreset import LayerPartition

__all__ = [
    "AuditReport",
    "ball_probes",
    "audit_coreset_loss",
    "audit_gradient",
    "error_beta",
    "purity",
    "check_claim1",
]


@dataclass
class AuditReport:
    samples_tested: int
    max_rel_loss_dev: float = 0.0
    max_abs_grad_dev: float = 0.0
    tolerance: float = 0.0
    passed: bool = True
    records: list[dict] = field(default_factory=list)

    @property
    def pass_(self) -> bool:
        return self.passed


def ball_probes(beta_anc, R: float, n_probes: int, seed: int, model: LossModel | None = None,
                max_tries: int = 100) -> np.ndarray:
    """Points drawn uniformly from B(beta_anc, R).

    Direction from a normalized Gaussian, radius R * U^(1/p). When a model is
    given, probes it rejects (``is_valid`` false, e.g. an indefinite GMM
    precision block) are redrawn.
    """
    if n_probes < 1:
        raise ParameterError("n_probes must be >= 1")
    if R < 0:
        raise ParameterError("R must be nonnegative")
    beta_anc = np.asarray(beta_anc, float)
    if R == 0:
        return beta_anc[None, :].copy()
    p = beta_anc.shape[0]
    rng = np.random.default_rng(seed)
    out = []
    tries = 0
    while len(out) < n_probes:
        u = rng.standard_normal(p)
        u /= np.linalg.norm(u)
        b = beta_anc + R * rng.random() ** (1.0 / p) * u
        if model is None or model.is_valid(b):
            out.append(b)
        else:
            tries += 1
            if tries > max_tries * n_probes:
                raise ParameterError("could not draw valid probes; R too large for the hypothesis domain")
    return np.array(out)


def audit_coreset_loss(dataset: Dataset, model: LossModel, coreset: Coreset, beta_anc, R: float,
                       eps: float, n_probes: int = 100, seed: int = 0) -> AuditReport:
    """max |F~ - F| / F over probes in the ball, compared with eps.

    A probe with F = 0 is compared absolutely against eps * F(beta_anc).
    """
    probes = ball_probes(beta_anc, R, n_probes, seed, model)
    f_anc = full_risk(dataset, model, beta_anc)
    worst = 0.0
    ok = True
    records = []
    for b in probes:
        F = full_risk(dataset, model, b)
        Ft = weighted_risk(dataset, model, coreset, b)
        gap = abs(Ft - F)
        if F > 0:
            dev = gap / F
            good = dev <= eps
        else:
            dev = gap / f_anc if f_anc > 0 else gap
            good = gap <= eps * f_anc
        ok &= good
        worst = max(worst, dev)
        records.append({"F": F, "F_coreset": Ft, "deviation": dev, "pass": bool(good)})
    return AuditReport(len(probes), max_rel_loss_dev=worst, tolerance=eps, passed=bool(ok), records=records)


def audit_gradient(dataset: Dataset, model: LossModel, coreset: Coreset, beta_anc, R: float,
                   sigma_grad: float, n_probes: int = 100, seed: int = 0) -> AuditReport:
    """Coordinate-wise max |grad F~ - grad F| over probes, compared with sigma_grad."""
    probes = ball_probes(beta_anc, R, n_probes, seed, model)
    full = Coreset.full(dataset.n)
    worst = 0.0
    records = []
    for b in probes:
        dev = float(np.max(np.abs(weighted_gradient(dataset, model, coreset, b) - weighted_gradient(dataset, model, full, b))))
        worst = max(worst, dev)
        records.append({"deviation": dev, "pass": dev <= sigma_grad})
    return AuditReport(len(probes), max_abs_grad_dev=worst, tolerance=sigma_grad,
                       passed=worst <= sigma_grad, records=records)


def error_beta(beta, beta_star) -> float:
    """||beta - beta*|| / ||beta*||."""
    beta = np.asarray(beta, float)
    beta_star = np.asarray(beta_star, float)
    if beta.shape != beta_star.shape:
        raise ContractError(f"shape mismatch {beta.shape} vs {beta_star.shape}")
    ref = float(np.linalg.norm(beta_star))
    if ref == 0:
        raise ParameterError("Error_beta is undefined for a zero reference solution")
    return float(np.linalg.norm(beta - beta_star)) / ref


def purity(assignments, ground_truth) -> float:
    """Fraction of points whose cluster's majority label equals their own."""
    a = np.asarray(assignments).ravel()
    g = np.asarray(ground_truth).ravel()
    if a.shape != g.shape:
        raise ContractError("assignments and ground truth differ in length")
    if a.size == 0:
        raise ContractError("purity of an empty labelling")
    hits = 0
    for c in np.unique(a):
        hits += Counter(g[a == c].tolist()).most_common(1)[0][1]
    return hits / a.size


def check_claim1(partition: LayerPartition) -> bool:
    """sum_j |P_j| 2^j <= 3n, in exact integer arithmetic."""
    total = sum(int(s) << j for j, s in enumerate(partition.sizes))
    return total <= 3 * partition.n
