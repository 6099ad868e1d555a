"""Experiment orchestration: run every method for every trial and emit JSON-lines records."""
from __future__ import annotations

import json
import math
import os
import tempfile
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Coreset, Dataset, LossModel, ParameterError
from .coreset import importance_baseline, pilot_solution, uniform_baseline
from .data import gen_gmm, gen_linear, load_csv
from .diagnostics import error_beta, purity
from .models import GmmModel, LassoModel, LogisticModel, RidgeModel
from .optimizers import HostConfig
from .sequential import SequentialConfig, one_shot_solve, run_sequential, solve_on_coreset

__all__ = [
    "METHODS",
    "WALL_TIME_FIELDS",
    "ExperimentSpec",
    "ResultRecord",
    "make_model",
    "load_data",
    "method_seed",
    "run_trial",
    "run_experiment",
    "write_records",
    "read_records",
]

METHODS = ("Original", "UniSamp", "ImpSamp", "SeqCore", "OneShot")
WALL_TIME_FIELDS = ("wall_time_s", "normalized_runtime")


@dataclass
class ExperimentSpec:
    model: dict
    data: dict
    methods: list[dict]
    trials: int = 1
    seed: int = 0
    output: str | None = None
    host: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if not self.methods:
            raise ParameterError("no methods given")
        for m in self.methods:
            if m.get("name") not in METHODS:
                raise ParameterError(f"unknown method {m.get('name')!r}; choose from {METHODS}")
            if m["name"] != "Original" and "budget" not in m:
                raise ParameterError(f"method {m['name']} needs a budget")
            if m["name"] == "SeqCore" and "R" not in m:
                raise ParameterError("SeqCore needs a radius R")
        if "csv" in self.data and not Path(self.data["csv"]).is_file():
            raise FileNotFoundError(self.data["csv"])

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if "data" in raw and "csv" in raw["data"]:
            # relative CSV paths resolve against the experiment file
            p = Path(raw["data"]["csv"])
            if not p.is_absolute():
                raw["data"]["csv"] = str(Path(path).parent / p)
        return cls(**raw)


@dataclass
class ResultRecord:
    method: str
    label: str
    trial: int
    seed: int
    coreset_size: int
    full_loss: float | None = None
    error_beta: float | None = None
    purity: float | None = None
    wall_time_s: float | None = None
    normalized_runtime: float | None = None
    segments: int | None = None
    terminated_by: str | None = None
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        return cls(**json.loads(line))


def make_model(cfg: dict) -> LossModel:
    cfg = dict(cfg)
    name = cfg.pop("name")
    cls = {"ridge": RidgeModel, "lasso": LassoModel, "logistic": LogisticModel, "gmm": GmmModel}.get(name)
    if cls is None:
        raise ParameterError(f"unknown model {name!r}")
    return cls(**cfg)


def load_data(cfg: dict, seed: int) -> tuple[Dataset, np.ndarray | None]:
    """Dataset plus ground-truth labels (GMM generator only)."""
    cfg = dict(cfg)
    if "csv" in cfg:
        return load_csv(cfg["csv"], cfg.get("has_header", False)), None
    kind = cfg.pop("generator", None)
    if kind == "linear":
        ds, _ = gen_linear(seed=seed, **cfg)
        return ds, None
    if kind == "gmm":
        return gen_gmm(seed=seed, **cfg)
    raise ParameterError(f"data needs 'csv' or generator in {{linear, gmm}}, got {kind!r}")


def method_label(m: dict) -> str:
    if m["name"] == "Original":
        return "Original"
    label = f"{m['name']}-b{m['budget']}"
    if m["name"] == "SeqCore":
        label += f"-R{m['R']}"
    return label


def method_seed(trial_seed: int, label: str) -> int:
    """Sampling seed derived from the trial seed and the method label."""
    return int(np.random.SeedSequence([trial_seed, zlib.crc32(label.encode())]).generate_state(1)[0])


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _quality(model, ds, labels, beta, beta_star):
    if isinstance(model, GmmModel):
        return None, (purity(model.predict(beta, ds.features), labels) if labels is not None else None)
    return error_beta(beta, beta_star), None


def _run_method(m, model, ds, host, tseed, label):
    """Returns (SolveResult, coreset_size)."""
    budget = m.get("budget")
    seed = method_seed(tseed, label)
    init = model.init_hypothesis(ds, tseed)
    if m["name"] == "UniSamp":
        t0 = time.perf_counter()
        cs = uniform_baseline(ds, budget, seed)
        return solve_on_coreset(ds, model, cs, init, host, build_time=time.perf_counter() - t0), budget
    if m["name"] == "ImpSamp":
        t0 = time.perf_counter()
        cs = importance_baseline(ds, model, budget, seed, host=host)
        return solve_on_coreset(ds, model, cs, init, host, build_time=time.perf_counter() - t0), budget
    # SeqCore and OneShot start from the same pilot fit on a uniform subsample
    t0 = time.perf_counter()
    beta0 = pilot_solution(ds, model, budget, method_seed(tseed, f"pilot-b{budget}"), host)
    pilot = time.perf_counter() - t0
    cfg = SequentialConfig(
        R=float(m.get("R", 1.0)), sigma=float(m.get("sigma", 0.05)), budget=budget,
        max_segments=int(m.get("max_segments", 200)), host=host, seed=seed,
        allocation=m.get("allocation", "lemma"),
    )
    if m["name"] == "SeqCore":
        res = run_sequential(ds, model, beta0, cfg)
    else:
        res = one_shot_solve(ds, model, beta0, cfg)
    res.wall_time += pilot
    return res, budget


def run_trial(spec: ExperimentSpec, trial: int) -> list[ResultRecord]:
    tseed = trial_seed(spec.seed, trial)
    model = make_model(spec.model)
    ds, labels = load_data(spec.data, tseed)
    host = HostConfig(**spec.host)
    t0 = time.perf_counter()
    orig = solve_on_coreset(ds, model, Coreset.full(ds.n), model.init_hypothesis(ds, tseed), host)
    orig_time = time.perf_counter() - t0
    beta_star = orig.beta
    out = []
    for m in spec.methods:
        label = method_label(m)
        rec = ResultRecord(method=m["name"], label=label, trial=trial, seed=tseed,
                           coreset_size=ds.n if m["name"] == "Original" else int(m["budget"]))
        try:
            if m["name"] == "Original":
                res, wall = orig, orig_time
            else:
                res, _ = _run_method(m, model, ds, host, tseed, label)
                wall = res.wall_time
            eb, pur = _quality(model, ds, labels, res.beta, beta_star)
            rec.full_loss = res.full_loss
            rec.error_beta = eb
            rec.purity = pur
            rec.wall_time_s = wall
            rec.normalized_runtime = 1.0 if m["name"] == "Original" else wall / orig_time
            rec.segments = len(res.segments) if m["name"] == "SeqCore" else None
            rec.terminated_by = res.terminated_by
            vals = [v for v in (rec.full_loss, eb, pur, wall) if v is not None]
            if not all(math.isfinite(v) for v in vals):
                raise ArithmeticError("non-finite metric")
        except Exception as exc:  # recorded, other methods proceed
            rec = ResultRecord(method=m["name"], label=label, trial=trial, seed=tseed,
                               coreset_size=rec.coreset_size, error=f"{type(exc).__name__}: {exc}")
        out.append(rec)
    return out


def write_records(records: list[ResultRecord], path) -> None:
    """Write all lines to a temporary file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    os.replace(tmp, path)


def read_records(path) -> list[ResultRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ResultRecord.from_json(line) for line in fh if line.strip()]


def run_experiment(spec: ExperimentSpec, output=None, workers: int = 1) -> list[ResultRecord]:
    """All (trial, method) records in trial order; trials may run in worker processes."""
    trials = range(spec.trials)
    if workers > 1 and spec.trials > 1:
        with ProcessPoolExecutor(max_workers=min(workers, spec.trials)) as pool:
            chunks = list(pool.map(run_trial, [spec] * spec.trials, trials))
    else:
        chunks = [run_trial(spec, t) for t in trials]
    records = [r for chunk in chunks for r in chunk]
    output = output or spec.output
    if output:
        write_records(records, output)
    return records
