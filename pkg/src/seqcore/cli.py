"""Command line entry point: ``seqcore gen|bench|solve|audit|check``."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import METHODS, ExperimentSpec, make_model, run_experiment
from .core import Coreset, full_risk
from .coreset import importance_baseline, local_coreset, partition_layers, pilot_solution, uniform_baseline
from .data import gen_gmm, gen_linear, load_csv, write_csv
from .diagnostics import audit_coreset_loss, audit_gradient, check_claim1
from .optimizers import HostConfig
from .sequential import SequentialConfig, one_shot_solve, run_sequential, solve_on_coreset

THREADS_ENV = "SEQCORE_THREADS"


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _emit(obj, output):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _model_from_args(args):
    cfg = {"name": args.model}
    if args.model in ("ridge", "lasso", "logistic") and args.lam is not None:
        cfg["lam"] = args.lam
    if args.model == "lasso" and args.p is not None:
        cfg["p"] = args.p
    if args.model == "gmm":
        cfg["k"] = args.k
    return cfg


def _dataset(args):
    ds = load_csv(args.data, args.header)
    model_cfg = _model_from_args(args)
    if args.model == "gmm":
        # GMM ignores the response column; treat every column as a feature
        from .core import Dataset

        ds = Dataset(np.column_stack([ds.features, ds.responses]), np.zeros(ds.n))
        model_cfg["D"] = ds.d
    return ds, make_model(model_cfg)


def cmd_gen(args):
    if args.kind == "linear":
        ds, h = gen_linear(args.n, args.d, (args.coef_low, args.coef_high), args.noise_var, args.seed)
        extra = h
    else:
        ds, labels = gen_gmm(args.n, args.D, args.k, args.separation, args.seed)
        ds = type(ds)(ds.features, labels.astype(float))
        extra = labels
    write_csv(ds, args.output, header=args.header)
    if args.truth:
        np.savetxt(args.truth, extra, fmt="%.17g")
    print(f"wrote {ds.n} rows x {ds.d} features to {args.output}", file=sys.stderr)
    return 0


def cmd_bench(args):
    spec = ExperimentSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    records = run_experiment(spec, output=args.output or spec.output, workers=_threads(args))
    if not (args.output or spec.output):
        for r in records:
            print(r.to_json())
    failed = sum(r.error is not None for r in records)
    return 1 if failed else 0


def cmd_solve(args):
    ds, model = _dataset(args)
    host = HostConfig(max_iters=args.max_iters)
    init = model.init_hypothesis(ds, args.seed)
    if args.method == "Original":
        res = solve_on_coreset(ds, model, Coreset.full(ds.n), init, host)
    elif args.method == "UniSamp":
        res = solve_on_coreset(ds, model, uniform_baseline(ds, args.budget, args.seed), init, host)
    elif args.method == "ImpSamp":
        res = solve_on_coreset(ds, model, importance_baseline(ds, model, args.budget, args.seed, host=host), init, host)
    else:
        beta0 = pilot_solution(ds, model, args.budget, args.seed, host)
        cfg = SequentialConfig(R=args.R, sigma=args.sigma, budget=args.budget, host=host, seed=args.seed)
        res = run_sequential(ds, model, beta0, cfg) if args.method == "SeqCore" else one_shot_solve(ds, model, beta0, cfg)
    _emit(res.to_dict(), args.output)
    return 0


def cmd_audit(args):
    ds, model = _dataset(args)
    anchor = pilot_solution(ds, model, args.pilot, args.seed)
    R = args.R if args.R is not None else args.radius_frac * float(np.linalg.norm(anchor))
    cs, plan = local_coreset(ds, model, anchor, R, args.seed, budget=args.budget, eps=args.eps)
    loss = audit_coreset_loss(ds, model, cs, anchor, R, args.eps, args.probes, args.seed)
    out = {
        "R": R,
        "coreset_size": cs.size,
        "plan_total": plan.total if plan else ds.n,
        "loss_audit": {"max_rel_loss_dev": loss.max_rel_loss_dev, "pass": loss.passed, "eps": args.eps},
    }
    ok = loss.passed
    if args.sigma_grad is not None:
        g = audit_gradient(ds, model, cs, anchor, R, args.sigma_grad, args.probes, args.seed)
        out["gradient_audit"] = {"max_abs_grad_dev": g.max_abs_grad_dev, "pass": g.passed, "sigma": args.sigma_grad}
        ok &= g.passed
    _emit(out, args.output)
    return 0 if ok else 1


def cmd_check(args):
    """Partition, weight and gradient invariants on the given data."""
    ds, model = _dataset(args)
    rng = np.random.default_rng(args.seed)
    anchor = model.init_hypothesis(ds, args.seed)
    if args.model != "gmm":
        anchor = anchor + rng.standard_normal(anchor.shape)
    results = {}
    part = partition_layers(ds, model, anchor)
    f, H = part.anchor_losses, part.H
    pred = all(
        (f[P] <= H).all() if j == 0 else ((f[P] > part.threshold(j - 1)) & (f[P] <= part.threshold(j))).all()
        for j, P in enumerate(part.layers)
    )
    cover = np.sort(np.concatenate(part.layers)).tolist() == list(range(ds.n))
    results["layer_predicate"] = bool(pred)
    results["disjoint_cover"] = bool(cover)
    results["claim1"] = check_claim1(part)
    results["max_loss_bound"] = bool(f.max() <= part.threshold(part.N))
    budget = min(args.budget, ds.n)
    sums = []
    for cs in (
        local_coreset(ds, model, anchor, 1.0, args.seed, budget=budget)[0],
        uniform_baseline(ds, budget, args.seed),
        importance_baseline(ds, model, budget, args.seed, scores=f),
    ):
        sums.append(abs(cs.total_weight - ds.n) / ds.n <= 1e-9)
    results["weights_sum_to_n"] = all(sums)
    idx = rng.choice(ds.n, size=min(20, ds.n), replace=False)
    worst = 0.0
    for i in idx:
        x, y = ds.features[i], ds.responses[i]
        g = model.grad(anchor, x, y)
        fd = np.empty_like(g)
        for l in range(g.shape[0]):
            e = np.zeros_like(anchor)
            e[l] = 1e-5
            fd[l] = (model.loss(anchor + e, x, y) - model.loss(anchor - e, x, y)) / 2e-5
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8)))
    results["gradient_fd_rel_error"] = worst
    results["gradient_fd"] = worst <= 1e-4
    results["anchor_risk"] = full_risk(ds, model, anchor)
    ok = all(v for k, v in results.items() if isinstance(v, bool))
    results["pass"] = ok
    _emit(results, args.output)
    return 0 if ok else 1


def _add_model_args(p):
    p.add_argument("--data", required=True, help="CSV file, features first and response last")
    p.add_argument("--header", action="store_true", help="skip the first row")
    p.add_argument("--model", choices=["ridge", "lasso", "logistic", "gmm"], default="ridge")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--p", type=float, default=None, help="Lasso penalty exponent")
    p.add_argument("--k", type=int, default=3, help="GMM component count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqcore", description="Local coresets and sequential coreset solving.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help=f"worker count (default ${THREADS_ENV} or 1)")
    common.add_argument("--output", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic CSV")
    g.add_argument("kind", choices=["linear", "gmm"])
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--d", type=int, default=50)
    g.add_argument("--coef-low", type=float, default=-5.0)
    g.add_argument("--coef-high", type=float, default=5.0)
    g.add_argument("--noise-var", type=float, default=4.0)
    g.add_argument("--D", type=int, default=2)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--separation", type=float, default=5.0)
    g.add_argument("--header", action="store_true")
    g.add_argument("--truth", default=None, help="also write coefficients (linear) or labels (gmm)")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("bench", parents=[common], help="run an experiment spec")
    b.add_argument("spec")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("solve", parents=[common], help="solve with one method and print the result")
    _add_model_args(s)
    s.add_argument("--method", choices=list(METHODS), default="SeqCore")
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--R", type=float, default=1.0)
    s.add_argument("--sigma", type=float, default=0.05)
    s.add_argument("--max-iters", type=int, default=5000)
    s.set_defaults(func=cmd_solve)

    a = sub.add_parser("audit", parents=[common], help="audit a local coreset built at a pilot anchor")
    _add_model_args(a)
    a.add_argument("--budget", type=int, default=None, help="omit for the theoretical size plan")
    a.add_argument("--eps", type=float, default=0.25)
    a.add_argument("--R", type=float, default=None)
    a.add_argument("--radius-frac", type=float, default=0.5, help="R as a fraction of the anchor norm")
    a.add_argument("--pilot", type=int, default=500)
    a.add_argument("--probes", type=int, default=100)
    a.add_argument("--sigma-grad", type=float, default=None)
    a.set_defaults(func=cmd_audit)

    c = sub.add_parser("check", parents=[common], help="run the invariant suite on a dataset")
    _add_model_args(c)
    c.add_argument("--budget", type=int, default=200)
    c.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gen" and args.n is None:
        args.n = 1_000_000 if args.kind == "linear" else 100_000
    if args.command != "bench" and args.seed is None:
        args.seed = 0
    if args.command == "gen" and args.output is None:
        build_parser().error("gen needs --output")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
