"""Layered local coresets around an anchor hypothesis, plus baseline compressors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import gammaln

from .core import (
    ContractError,
    Coreset,
    Dataset,
    LossModel,
    ParameterError,
    exact_sum,
    full_risk,
)
from .models import SmoothnessConstants, smoothness_constants

__all__ = [
    "DegenerateAnchorError",
    "InfeasibleBudgetError",
    "LayerPartition",
    "SizePlan",
    "GRID_CONSTANT",
    "partition_layers",
    "theoretical_layer_size",
    "grid_log_size",
    "theoretical_plan",
    "budget_plan",
    "build_local_coreset",
    "local_coreset",
    "uniform_baseline",
    "importance_baseline",
    "pilot_solution",
    "layer_seed",
]

# constant inside the O(.) of the grid cardinality bound
GRID_CONSTANT = 2.0 * math.sqrt(math.pi * math.e)


class DegenerateAnchorError(ValueError):
    """The anchor has zero risk, so the layer thresholds collapse."""


class InfeasibleBudgetError(ValueError):
    """The requested budget cannot give every non-empty layer a sample."""


@dataclass(frozen=True, eq=False)
class LayerPartition:
    H: float
    N: int
    layers: list[np.ndarray]
    anchor_losses: np.ndarray
    layer_of: np.ndarray

    @property
    def n(self) -> int:
        return int(self.anchor_losses.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(P) for P in self.layers], dtype=np.int64)

    def threshold(self, j: int) -> float:
        return math.ldexp(self.H, j)


@dataclass(frozen=True, eq=False)
class SizePlan:
    mode: Literal["theoretical", "budget"]
    per_layer: np.ndarray
    params: dict = field(default_factory=dict)
    uncapped: np.ndarray | None = None
    partition: LayerPartition | None = None

    @property
    def total(self) -> int:
        return int(self.per_layer.sum())


def _layer_indices(f: np.ndarray, H: float, N: int) -> np.ndarray:
    """Smallest j with f <= 2^j H (j = 0 for f <= H), by exact comparisons."""
    j = np.zeros(f.shape[0], dtype=np.int64)
    above = f > H
    if above.any():
        with np.errstate(divide="ignore"):
            guess = np.ceil(np.log2(f[above] / H)).astype(np.int64)
        guess = np.clip(guess, 1, N + 1)
        fa = f[above]
        # log2 can be off by one ulp near powers of two
        too_low = fa > np.ldexp(H, guess)
        guess[too_low] += 1
        too_high = (guess > 1) & (fa <= np.ldexp(H, guess - 1))
        guess[too_high] -= 1
        j[above] = guess
    return j


def partition_layers(dataset: Dataset, model: LossModel, beta_anc) -> LayerPartition:
    """Split points into N+1 layers by their loss at the anchor, N = ceil(log2 n)."""
    beta_anc = model.check_beta(beta_anc, dataset)
    n = dataset.n
    f = model.losses(beta_anc, dataset.features, dataset.responses)
    H = exact_sum(f) / n
    if not math.isfinite(H):
        raise ContractError("non-finite risk at the anchor")
    if H <= 0:
        raise DegenerateAnchorError("all losses are zero at the anchor")
    N = math.ceil(math.log2(n)) if n > 1 else 0
    j = _layer_indices(f, H, N)
    if j.max() > N:
        raise AssertionError("a point exceeds the top layer threshold 2^N H")
    layers = [np.flatnonzero(j == t) for t in range(N + 1)]
    f = np.array(f)
    f.setflags(write=False)
    return LayerPartition(H=H, N=N, layers=layers, anchor_losses=f, layer_of=j)


def _ceil(x: float) -> int:
    # ignore rounding noise just above an integer
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def _range_width(j: int, H: float, L: float, M: float, R: float) -> float:
    """Spread of f_i over the ball for points of layer j."""
    if j == 0:
        return H + 0.5 * L * R * R + M * R
    return math.ldexp(H, j - 1) + L * R * R + 2.0 * M * R


def theoretical_layer_size(j, H, L, M, R, delta, lam_fail, log_extra: float = 0.0) -> int:
    """ceil(1/2 * width_j^2 / delta^2 * (ln(2/lam_fail) + log_extra)).

    ``log_extra`` adds ln of the union-bound multiplicity; it lets callers pass
    ln((N+1)|G|) without forming |G| itself.
    """
    if delta <= 0:
        raise ParameterError("delta must be positive")
    if not 0 < lam_fail < 1:
        raise ParameterError("lam_fail must lie in (0, 1)")
    width = _range_width(j, H, L, M, R)
    val = 0.5 * width * width / (delta * delta) * (math.log(2.0 / lam_fail) + log_extra)
    if not math.isfinite(val):
        return math.inf
    return _ceil(val)


def grid_log_size(d: int, eps2: float, sparsity_k: int | None = None) -> float:
    """ln |G| for the analysis grid: d or k cells per axis factor, plus ln C(d, k)."""
    per_axis = max(0.0, math.log(GRID_CONSTANT / eps2)) if eps2 > 0 else math.inf
    if sparsity_k is None:
        return d * per_axis
    k = int(sparsity_k)
    if not 1 <= k <= d:
        raise ParameterError(f"sparsity_k must lie in [1, {d}]")
    log_binom = float(gammaln(d + 1) - gammaln(k + 1) - gammaln(d - k + 1))
    return max(0.0, log_binom) + k * per_axis


def default_m_lower(H: float, constants: SmoothnessConstants, R: float, floor: float = 0.1) -> float:
    return max(floor * H, H - constants.M_bar * R - 0.5 * constants.L * R * R)


def theoretical_plan(
    partition: LayerPartition,
    constants: SmoothnessConstants,
    eps: float,
    R: float,
    lam_fail: float,
    dim: int,
    sparsity_k: int | None = None,
    m_lower: float | None = None,
) -> SizePlan:
    """Per-layer sample sizes that make the coreset a local eps-coreset w.h.p."""
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    H, N = partition.H, partition.N
    L, M = constants.L, constants.M
    if m_lower is None:
        m_lower = default_m_lower(H, constants, R)
    if not m_lower > 0:
        raise ParameterError(f"m_lower must be positive, got {m_lower}")
    eps1 = 2.0 * m_lower * eps / (7.0 * H)
    M_prime = constants.M_prime_bound
    if R > 0:
        eps2 = 2.0 * eps1 * H / (R * (math.sqrt(M_prime**2 + 2.0 * L * eps1 * H) + M_prime))
        log_G = grid_log_size(dim, eps2, sparsity_k)
    else:
        eps2 = math.inf
        log_G = 0.0 if sparsity_k is None else grid_log_size(dim, GRID_CONSTANT, sparsity_k)
    log_extra = math.log(N + 1) + log_G
    sizes = partition.sizes
    uncapped = []
    for j in range(N + 1):
        if sizes[j] == 0:
            uncapped.append(0)
            continue
        delta = eps1 * (H if j == 0 else math.ldexp(H, j - 1))
        uncapped.append(theoretical_layer_size(j, H, L, M, R, delta, lam_fail, log_extra))
    capped = np.array([min(int(s), u) if u != math.inf else int(s) for s, u in zip(sizes, uncapped)], dtype=np.int64)
    params = dict(eps=eps, R=R, L=L, M=M, m_lower=m_lower, lam_fail=lam_fail, sparsity_k=sparsity_k,
                  eps1=eps1, eps2=eps2, log_grid=log_G)
    return SizePlan("theoretical", capped, params, np.array(uncapped, dtype=object), partition)


def _allocation_scores(partition, constants, R, allocation):
    sizes = partition.sizes.astype(float)
    widths = np.array([_range_width(j, partition.H, constants.L, constants.M, R) for j in range(partition.N + 1)])
    if allocation == "neyman":
        # per-layer gradient bound instead of the global maximum
        norms = constants.grad_norms
        for j, P in enumerate(partition.layers):
            if len(P):
                Mj = float(norms[P].max())
                widths[j] = _range_width(j, partition.H, constants.L, Mj, R)
    if not np.isfinite(widths).all():
        widths = np.ones_like(widths)  # an infinite common term dominates every layer equally
    if allocation == "lemma":
        scores = widths**2
    elif allocation == "neyman":
        scores = sizes * widths
    else:
        raise ParameterError(f"unknown allocation {allocation!r}")
    return np.where(sizes > 0, scores, 0.0)


def _apportion(scores: np.ndarray, caps: np.ndarray, budget: int) -> np.ndarray:
    """Integer split of ``budget`` proportional to ``scores``, 1 <= q_j <= caps_j on active layers."""
    active = caps > 0
    q = np.zeros_like(caps)
    free = active.copy()
    remaining = budget
    share = np.zeros(len(caps))
    while free.any():
        s = np.where(free, scores, 0.0)
        tot = s.sum()
        share = remaining * s / tot if tot > 0 else np.where(free, remaining / free.sum(), 0.0)
        over = free & (share >= caps)
        if not over.any():
            break
        q[over] = caps[over]
        remaining -= int(caps[over].sum())
        free &= ~over
    if free.any():
        base = np.floor(share).astype(np.int64)
        base = np.where(free, np.clip(base, 1, caps), 0)
        q[free] = base[free]
        frac = np.where(free, share - np.floor(share), -np.inf)
        diff = budget - int(q.sum())
        order = np.argsort(-frac, kind="stable")
        while diff > 0:
            moved = False
            for j in order:
                if diff == 0:
                    break
                if free[j] and q[j] < caps[j]:
                    q[j] += 1
                    diff -= 1
                    moved = True
            if not moved:
                break
        rev = np.argsort(frac, kind="stable")
        while diff < 0:
            moved = False
            for j in rev:
                if diff == 0:
                    break
                if free[j] and q[j] > 1:
                    q[j] -= 1
                    diff += 1
                    moved = True
            if not moved:
                break
    diff = budget - int(q.sum())
    if diff < 0:
        # the one-per-layer floor overran the budget after capping; take the
        # excess from the layers furthest above their ideal share
        tot = scores[active].sum()
        ideal = budget * scores / tot if tot > 0 else np.where(active, budget / active.sum(), 0.0)
        while diff < 0:
            cand = np.flatnonzero(active & (q > 1))
            j = cand[np.argmax(q[cand] - ideal[cand])]
            q[j] -= 1
            diff += 1
    return q


def budget_plan(
    partition: LayerPartition,
    constants: SmoothnessConstants,
    budget: int,
    R: float,
    allocation: Literal["lemma", "neyman"] = "lemma",
) -> SizePlan:
    """Split a fixed coreset size across the non-empty layers.

    ``allocation="lemma"`` weights each non-empty layer by its squared range
    width alone; ``"neyman"`` weights it by population times range width, which
    is the variance-minimising split for a fixed total.
    """
    sizes = partition.sizes
    nonempty = int((sizes > 0).sum())
    if not 1 <= budget <= partition.n:
        raise ParameterError(f"budget must lie in [1, {partition.n}], got {budget}")
    if budget < nonempty:
        raise InfeasibleBudgetError(f"budget {budget} is below the {nonempty} non-empty layers")
    scores = _allocation_scores(partition, constants, R, allocation)
    q = _apportion(scores, sizes.astype(np.int64), int(budget))
    if q.sum() != budget:
        raise AssertionError("budget apportionment did not sum to the budget")
    return SizePlan("budget", q, dict(budget=budget, R=R, allocation=allocation), None, partition)


def layer_seed(seed: int, j: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(j)])


def build_local_coreset(dataset: Dataset, model: LossModel, beta_anc, plan: SizePlan, seed: int) -> Coreset:
    """Draw |Q_j| points per layer without replacement; weight |P_j| / |Q_j|."""
    partition = plan.partition if plan.partition is not None else partition_layers(dataset, model, beta_anc)
    if partition.n != dataset.n or len(plan.per_layer) != len(partition.layers):
        raise ContractError("size plan does not match the layer partition")
    w = np.zeros(dataset.n)
    for j, (P, q) in enumerate(zip(partition.layers, plan.per_layer)):
        q = int(q)
        if len(P) == 0:
            continue
        if not 1 <= q <= len(P):
            raise ContractError(f"layer {j} has {len(P)} points but plan asks for {q}")
        chosen = P if q == len(P) else layer_seed(seed, j).choice(P, size=q, replace=False)
        w[chosen] = len(P) / q
    return Coreset(w, provenance="layered")


def local_coreset(
    dataset: Dataset,
    model: LossModel,
    beta_anc,
    R: float,
    seed: int,
    *,
    budget: int | None = None,
    eps: float = 0.25,
    lam_fail: float = 0.1,
    allocation: str = "lemma",
    sparsity_k: int | None = None,
) -> tuple[Coreset, SizePlan | None]:
    """Partition, size and sample in one call. Budget mode when ``budget`` is given."""
    try:
        partition = partition_layers(dataset, model, beta_anc)
    except DegenerateAnchorError:
        return Coreset(np.ones(dataset.n), provenance="layered"), None
    constants = smoothness_constants(model, dataset, beta_anc, R)
    if budget is not None:
        plan = budget_plan(partition, constants, budget, R, allocation)
    else:
        plan = theoretical_plan(partition, constants, eps, R, lam_fail, model.dim(dataset), sparsity_k)
    return build_local_coreset(dataset, model, beta_anc, plan, seed), plan


def uniform_baseline(dataset: Dataset, size: int, seed: int) -> Coreset:
    n = dataset.n
    if not 1 <= size <= n:
        raise ParameterError(f"size must lie in [1, {n}], got {size}")
    w = np.zeros(n)
    idx = np.arange(n) if size == n else np.random.default_rng(seed).choice(n, size=size, replace=False)
    w[idx] = n / size
    return Coreset(w, provenance="uniform")


def pilot_solution(dataset: Dataset, model: LossModel, size: int, seed: int, host=None) -> np.ndarray:
    """Host solution on a uniform subsample; used as a starting anchor."""
    from .optimizers import HostConfig, run_host

    cs = uniform_baseline(dataset, min(size, dataset.n), seed)
    beta0 = model.init_hypothesis(dataset, seed)
    return run_host(model, dataset, cs, beta0, host or HostConfig()).beta


def importance_baseline(
    dataset: Dataset,
    model: LossModel,
    size: int,
    seed: int,
    *,
    pilot_size: int | None = None,
    floor: float = 1.0,
    host=None,
    scores: np.ndarray | None = None,
) -> Coreset:
    """Sample with replacement with p_i proportional to s_i + floor * mean(s).

    s_i is the loss of point i at a pilot fit on a uniform subsample (or the
    given ``scores``). Repeated draws accumulate weight; the result is rescaled
    so the weights sum to n.
    """
    n = dataset.n
    if size < 1:
        raise ParameterError(f"size must be >= 1, got {size}")
    rng = np.random.default_rng([int(seed), 1])
    if scores is None:
        m = pilot_size or max(1, min(n, size))
        beta = pilot_solution(dataset, model, m, int(rng.integers(2**31)), host)
        scores = model.losses(beta, dataset.features, dataset.responses)
    s = np.asarray(scores, dtype=np.float64)
    total = exact_sum(s)
    if total <= 0:
        return uniform_baseline(dataset, min(size, n), seed)
    p = s + floor * total / n
    p = p / p.sum()
    draws = rng.choice(n, size=size, replace=True, p=p)
    w = np.zeros(n)
    np.add.at(w, draws, 1.0 / (size * p[draws]))
    w *= n / exact_sum(w)
    return Coreset(w, provenance="importance")
