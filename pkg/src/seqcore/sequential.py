"""Sequential coreset solving: rebuild a local coreset whenever the iterate nears the ball edge."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .core import Coreset, Dataset, LossModel, NumericError, ParameterError, full_risk
from .coreset import local_coreset
from .optimizers import HostConfig, Stepper, default_stepper, run_host

__all__ = [
    "SequentialConfig",
    "SegmentStat",
    "SolveResult",
    "boundary_reached",
    "run_sequential",
    "one_shot_solve",
    "solve_on_coreset",
]


@dataclass(frozen=True)
class SequentialConfig:
    R: float
    eps: float = 0.25
    sigma: float = 0.05
    budget: int | None = None
    max_segments: int = 200
    host: HostConfig = field(default_factory=HostConfig)
    seed: int = 0
    lam_fail: float = 0.1
    allocation: str = "lemma"
    sparsity_k: int | None = None

    def __post_init__(self):
        if not self.R > 0:
            raise ParameterError(f"R must be positive, got {self.R}")
        if not 0 < self.sigma < 1:
            raise ParameterError(f"sigma must lie in (0, 1), got {self.sigma}")
        if not 0 < self.eps < 1:
            raise ParameterError(f"eps must lie in (0, 1), got {self.eps}")
        if self.max_segments < 1:
            raise ParameterError("max_segments must be >= 1")

    @property
    def size_mode(self) -> str:
        return "theoretical" if self.budget is None else "budget"


@dataclass
class SegmentStat:
    coreset_size: int
    iterations: int
    entry_loss: float
    exit_loss: float
    build_time: float


@dataclass
class SolveResult:
    beta: np.ndarray
    anchors: list[np.ndarray]
    segments: list[SegmentStat]
    full_loss: float
    wall_time: float
    terminated_by: Literal["stable", "segment_cap", "iter_cap"]
    iterations: int

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "anchors": [a.tolist() for a in self.anchors],
            "segments": [vars(s) for s in self.segments],
            "full_loss": self.full_loss,
            "wall_time": self.wall_time,
            "terminated_by": self.terminated_by,
            "iterations": self.iterations,
        }


def boundary_reached(beta_t, beta, R: float, sigma: float) -> bool:
    """True once ||beta - beta_t|| exceeds (1 - sigma) R."""
    if not R > 0 or not 0 < sigma < 1:
        raise ParameterError("need R > 0 and 0 < sigma < 1")
    return float(np.linalg.norm(np.asarray(beta, float) - np.asarray(beta_t, float))) > (1.0 - sigma) * R


def _segment_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(t)]).generate_state(1)[0])


def run_sequential(
    dataset: Dataset,
    model: LossModel,
    beta0,
    config: SequentialConfig,
    stepper: Stepper | None = None,
) -> SolveResult:
    """Anchor a local coreset at beta_t, run the host inside B(beta_t, R), re-anchor at the edge."""
    start = time.perf_counter()
    stepper = stepper or default_stepper(model)
    beta = model.check_beta(beta0, dataset)
    anchors = [beta.copy()]
    segments: list[SegmentStat] = []
    host = config.host
    total = 0
    t = 0
    terminated = None
    while terminated is None:
        anchor = anchors[-1]
        tb = time.perf_counter()
        coreset, _ = local_coreset(
            dataset, model, anchor, config.R, _segment_seed(config.seed, t),
            budget=config.budget, eps=config.eps, lam_fail=config.lam_fail,
            allocation=config.allocation, sparsity_k=config.sparsity_k,
        )
        build = time.perf_counter() - tb
        ball = (anchor, config.R)
        iters = 0
        entry = exit_ = math.nan
        crossed = False
        while True:
            if total >= host.max_iters:
                terminated = "iter_cap"
                break
            try:
                out = stepper(model, dataset, coreset, beta, host, ball=ball, t=total)
            except NumericError as exc:
                raise NumericError(f"segment {t}: {exc}", exc.index) from exc
            if iters == 0:
                entry = out.loss_before
            total += 1
            iters += 1
            beta = out.beta
            exit_ = out.loss
            if boundary_reached(anchor, beta, config.R, config.sigma):
                crossed = True
                break
            if out.stable:
                terminated = "stable"
                break
        segments.append(SegmentStat(coreset.size, iters, entry, exit_, build))
        if crossed:
            if t + 1 >= config.max_segments:
                terminated = "segment_cap"
            else:
                anchors.append(beta.copy())
                t += 1
    wall = time.perf_counter() - start
    return SolveResult(beta, anchors, segments, full_risk(dataset, model, beta), wall, terminated, total)


def solve_on_coreset(
    dataset: Dataset,
    model: LossModel,
    coreset: Coreset,
    beta0,
    host: HostConfig,
    stepper: Stepper | None = None,
    build_time: float = 0.0,
) -> SolveResult:
    """Run the host to convergence on a fixed coreset (no re-anchoring)."""
    start = time.perf_counter()
    beta0 = model.check_beta(beta0, dataset)
    hr = run_host(model, dataset, coreset, beta0, host, stepper)
    seg = SegmentStat(coreset.size, hr.iterations, hr.losses[0] if hr.losses else math.nan, hr.loss, build_time)
    wall = time.perf_counter() - start + build_time
    return SolveResult(
        hr.beta, [beta0.copy()], [seg], full_risk(dataset, model, hr.beta), wall,
        "stable" if hr.stable else "iter_cap", hr.iterations,
    )


def one_shot_solve(
    dataset: Dataset,
    model: LossModel,
    beta0,
    config: SequentialConfig,
    stepper: Stepper | None = None,
    sizing_radius: float = 0.0,
) -> SolveResult:
    """Build one layered coreset at beta0 and solve on it, never rebuilding.

    The ball radius plays no role in the solve; ``sizing_radius`` is the
    radius fed to the budget split (0 by default).
    """
    if config.budget is None:
        raise ParameterError("one-shot solving needs a fixed budget")
    start = time.perf_counter()
    beta0 = model.check_beta(beta0, dataset)
    coreset, _ = local_coreset(
        dataset, model, beta0, sizing_radius, _segment_seed(config.seed, 0),
        budget=config.budget, allocation=config.allocation,
    )
    build = time.perf_counter() - start
    return solve_on_coreset(dataset, model, coreset, beta0, config.host, stepper, build)
