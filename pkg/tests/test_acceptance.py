"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from conftest import MODELS, random_beta
from seqcore import (
    Coreset, Dataset, GmmModel, HostConfig, LassoModel, LogisticModel, RidgeModel, SequentialConfig,
    full_risk, one_shot_solve, run_host, run_sequential, uniform_baseline, weighted_risk,
)
from seqcore.bench import ExperimentSpec, WALL_TIME_FIELDS, run_experiment
from seqcore.coreset import (
    importance_baseline, local_coreset, partition_layers, pilot_solution, theoretical_plan,
)
from seqcore.data import gen_gmm, gen_linear
from seqcore.diagnostics import audit_coreset_loss, audit_gradient, check_claim1, error_beta, purity
from seqcore.models import smoothness_constants
from seqcore.optimizers import em_step, gd_step

RESULTS = {}


def report(k, ok, detail):
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[k] = line
    print(line)
    assert ok, line


def _ridge_optimum(ds, lam):
    X, y = ds.features, ds.responses
    return np.linalg.solve(X.T @ X / ds.n + lam * np.eye(ds.d), X.T @ y / ds.n)


# 1 -------------------------------------------------------------------------

def test_criterion_01_partition_correctness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = 0
    for t in range(1000):
        name = ("ridge", "lasso", "logistic")[t % 3]
        n = int(rng.integers(1, 2001))
        d = int(rng.integers(1, 9))
        X = rng.standard_normal((n, d)) * rng.uniform(0.1, 5)
        if name == "logistic":
            y = (rng.random(n) < 0.5).astype(float)
            model = LogisticModel(float(rng.uniform(0, 0.1)))
        else:
            y = X @ rng.uniform(-3, 3, d) + rng.standard_normal(n) * rng.uniform(0, 2)
            model = RidgeModel(float(rng.uniform(0, 0.1))) if name == "ridge" else LassoModel(float(rng.uniform(0, 0.5)), 1.0)
        ds = Dataset(X, y)
        anchor = rng.standard_normal(d) * rng.uniform(0, 4)
        P = partition_layers(ds, model, anchor)
        f, H = model.losses(anchor, ds.features, ds.responses), P.H
        ok = True
        for j, idx in enumerate(P.layers):
            if j == 0:
                ok &= bool((f[idx] <= H).all())
            else:
                ok &= bool(((f[idx] > math.ldexp(H, j - 1)) & (f[idx] <= math.ldexp(H, j))).all())
        allidx = np.concatenate(P.layers)
        ok &= allidx.size == n and np.array_equal(np.sort(allidx), np.arange(n))
        ok &= len(P.layers) == P.N + 1 and P.N == (math.ceil(math.log2(n)) if n > 1 else 0)
        ok &= check_claim1(P)
        ok &= sum(int(s) << j for j, s in enumerate(P.sizes)) <= 3 * n
        ok &= bool(f.max() <= math.ldexp(H, P.N))
        bad += not ok
    elapsed = time.perf_counter() - t0
    report(1, bad == 0 and elapsed < 60, f"1000 triples, {bad} violations, {elapsed:.1f}s (< 60s)")


# 2 -------------------------------------------------------------------------

def test_criterion_02_weight_normalisation():
    rng = np.random.default_rng(7)
    worst = 0.0
    full_ok = True
    count = 0
    for t in range(30):
        n = int(rng.integers(20, 3000))
        ds, _ = gen_linear(n, 4, seed=t)
        model = [RidgeModel(0.01), LassoModel(0.1), RidgeModel(0.0)][t % 3]
        anchor = rng.standard_normal(4)
        budget = int(rng.integers(1, n + 1))
        budget = max(budget, int((partition_layers(ds, model, anchor).sizes > 0).sum()))
        sets = [
            local_coreset(ds, model, anchor, 0.3, t, budget=budget)[0],
            local_coreset(ds, model, anchor, 0.3, t, budget=budget, allocation="lemma")[0],
            local_coreset(ds, model, anchor, 0.05, t, eps=0.5)[0],
            uniform_baseline(ds, budget, t),
            importance_baseline(ds, model, budget, t),
        ]
        for cs in sets:
            worst = max(worst, abs(cs.total_weight - n) / n)
            count += 1
        full_ok &= bool((local_coreset(ds, model, anchor, 0.3, t, budget=n)[0].weights == 1.0).all())
        full_ok &= bool((uniform_baseline(ds, n, t).weights == 1.0).all())
    ok = worst <= 1e-9 and full_ok
    report(2, ok, f"{count} coresets, max |sum w - n|/n = {worst:.2e} (<= 1e-9); full budgets all exactly 1: {full_ok}")


# 3, 4 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def audit_instance():
    ds, _ = gen_linear(5000, 5, seed=11)
    model = RidgeModel(0.01)
    anchor = pilot_solution(ds, model, 500, 3)
    R = 0.5 * float(np.linalg.norm(anchor))
    return ds, model, anchor, R


def test_criterion_03_local_loss_audit(audit_instance):
    ds, model, anchor, R = audit_instance
    t0 = time.perf_counter()
    passes, worst, sizes = 0, 0.0, []
    for b in range(20):
        cs, plan = local_coreset(ds, model, anchor, R, 100 + b, eps=0.25)
        rep = audit_coreset_loss(ds, model, cs, anchor, R, 0.25, 100, 500 + b)
        passes += rep.passed
        worst = max(worst, rep.max_rel_loss_dev)
        sizes.append(cs.size)
    elapsed = time.perf_counter() - t0
    ok = passes >= 19 and elapsed < 120
    report(3, ok, f"{passes}/20 builds pass at eps=0.25 (max dev {worst:.2e}); coreset sizes {min(sizes)}-{max(sizes)} "
                  f"of n=5000 (plan capped at |P_j|); {elapsed:.1f}s (< 120s)")


def test_criterion_04_gradient_audit(audit_instance):
    ds, model, anchor, R = audit_instance
    full = Coreset.full(ds.n)
    zero = audit_gradient(ds, model, full, anchor, R, 1e-12, 100, 1).max_abs_grad_dev
    half, _ = local_coreset(ds, model, anchor, R, 42, budget=ds.n // 2)
    baseline = audit_gradient(ds, model, half, anchor, R, np.inf, 100, 2).max_abs_grad_dev
    sigma = 2.0 * baseline
    cs, _ = local_coreset(ds, model, anchor, R, 43, eps=0.25)
    rep = audit_gradient(ds, model, cs, anchor, R, sigma, 100, 3)
    ok = zero <= 1e-12 and rep.passed
    report(4, ok, f"full-weight deviation {zero:.1e} (<= 1e-12); sigma_grad = 2 x {baseline:.3e}; "
                  f"theoretical coreset deviation {rep.max_abs_grad_dev:.3e}")


# 5 -------------------------------------------------------------------------

def test_criterion_05_gradient_correctness():
    rng = np.random.default_rng(5)
    worst = {}
    for name in sorted(MODELS):
        mk, dk = MODELS[name]
        model, ds = mk(), dk(3)
        w = 0.0
        for _ in range(100):
            beta = random_beta(model, ds, rng)
            if name == "lasso":
                beta[np.abs(beta) < 1e-3] = 1e-2
            i = int(rng.integers(ds.n))
            x, y = ds.features[i], ds.responses[i]
            g = model.grad(beta, x, y)
            fd = np.empty_like(g)
            for l in range(beta.size):
                e = np.zeros_like(beta)
                e[l] = 1e-5
                fd[l] = (model.loss(beta + e, x, y) - model.loss(beta - e, x, y)) / 2e-5
            w = max(w, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-6)))
        worst[name] = w
    ok = all(v <= 1e-4 for v in worst.values())
    report(5, ok, "max relative FD error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-4)")


# 6 -------------------------------------------------------------------------

def test_criterion_06_degenerate_equivalence():
    ds, _ = gen_linear(3000, 8, seed=6)
    model = RidgeModel(0.01)
    host = HostConfig(grad_tol=1e-8)
    beta0 = np.zeros(8)
    direct = run_host(model, ds, Coreset.full(ds.n), beta0, host)
    # a radius beyond the total trajectory length: one ball
    one = run_sequential(ds, model, beta0, SequentialConfig(R=1e3, budget=ds.n, host=host))
    gap1 = float(np.abs(one.beta - direct.beta).max())
    # small fixed steps and sigma = 0.5: many balls, ball cap never binds
    host2 = HostConfig(step_size=0.02, grad_tol=1e-6)
    traj = [beta0]
    b = beta0
    for t in range(host2.max_iters):
        out = gd_step(model, ds, Coreset.full(ds.n), b, host2, t=t)
        b = out.beta
        traj.append(b)
        if out.stable:
            break
    step = max(np.linalg.norm(p - q) for p, q in zip(traj, traj[1:]))
    many = run_sequential(ds, model, beta0, SequentialConfig(R=3.01 * step, sigma=0.5, budget=ds.n, host=host2))
    gap2 = float(np.abs(many.beta - traj[-1]).max())
    on_path = all(any(np.array_equal(a, p) for p in traj) for a in many.anchors)
    ok = gap1 <= 1e-12 and len(one.anchors) == 1 and gap2 <= 1e-12 and on_path and len(many.anchors) > 1
    report(6, ok, f"single ball: {len(one.anchors)} anchor, |beta - host| = {gap1:.1e}; "
                  f"{len(many.anchors)} balls: |beta - host| = {gap2:.1e}, anchors on host path: {on_path}")


# 7, 8 ----------------------------------------------------------------------

RADII = (0.1, 0.5, 1.0)
TRIALS = 10


def _linear_trials(budget, with_baselines):
    """Per-trial metrics for SeqCore at each radius (and the baselines) on the linear instance."""
    model = RidgeModel(0.01)
    rows = []
    for t in range(TRIALS):
        ds, _ = gen_linear(100_000, 50, noise_var=4.0, seed=7000 + t)
        opt = _ridge_optimum(ds, 0.01)
        f_opt = full_risk(ds, model, opt)
        beta0 = pilot_solution(ds, model, budget, 31 + t)
        row = {"f_opt": f_opt}
        for R in RADII:
            res = run_sequential(ds, model, beta0, SequentialConfig(R=R, budget=budget, seed=100 + t))
            row[R] = (res.full_loss / f_opt, error_beta(res.beta, opt))
        if with_baselines:
            uni = run_host(model, ds, uniform_baseline(ds, budget, 200 + t), np.zeros(50), HostConfig())
            row["uni"] = error_beta(uni.beta, opt)
            one = one_shot_solve(ds, model, beta0, SequentialConfig(R=1.0, budget=budget, seed=100 + t))
            row["one"] = error_beta(one.beta, opt)
        rows.append(row)
    return rows


def _best_radius(rows):
    mean_loss = {R: np.mean([r[R][0] for r in rows]) for R in RADII}
    return min(mean_loss, key=mean_loss.get), mean_loss


def test_criterion_07_sequential_quality():
    t0 = time.perf_counter()
    rows = _linear_trials(2000, with_baselines=False)
    R, mean_loss = _best_radius(rows)
    ratio = mean_loss[R]
    err = float(np.mean([r[R][1] for r in rows]))
    elapsed = time.perf_counter() - t0
    ok = ratio <= 1.05 and err <= 0.05 and elapsed < 300
    sweep = ", ".join(f"R={r}: {mean_loss[r]:.4f}" for r in RADII)
    report(7, ok, f"best R={R}: loss/optimum {ratio:.4f} (<= 1.05), Error_beta {err:.4f} (<= 0.05); "
                  f"sweep [{sweep}]; {elapsed:.0f}s (< 300s)")


def test_criterion_08_baseline_ordering():
    rows = _linear_trials(500, with_baselines=True)
    R, _ = _best_radius(rows)
    seq = float(np.mean([r[R][1] for r in rows]))
    uni = float(np.mean([r["uni"] for r in rows]))
    one = float(np.mean([r["one"] for r in rows]))
    ok = seq <= 1.02 * uni and seq <= 1.02 * one
    report(8, ok, f"budget 500, mean Error_beta: SeqCore(R={R}) {seq:.4f}, UniSamp {uni:.4f}, OneShot {one:.4f}")


# 9 -------------------------------------------------------------------------

def test_criterion_09_lasso():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((50, 10))
    y = X @ np.where(rng.random(10) < 0.4, rng.uniform(-3, 3, 10), 0.0) + 0.5 * rng.standard_normal(50)
    ds = Dataset(X, y)
    model = LassoModel(0.5, 1.0)
    run = run_host(model, ds, Coreset.full(50), np.zeros(10),
                   HostConfig(grad_tol=1e-12, rel_loss_tol=1e-300, max_iters=100_000))
    b = run.beta
    g = 2.0 * X.T @ (X @ b - y) / 50
    nz = b != 0
    kkt = max(np.abs(g[nz] + model.lam * np.sign(b[nz])).max(initial=0.0),
              (np.abs(g[~nz]) - model.lam).max(initial=-np.inf))
    kkt_ok = kkt <= 1e-6
    c = smoothness_constants(model, ds, b, 0.1)
    smooth_max = float(np.max(2.0 * np.abs(X @ b - y) * np.linalg.norm(X, axis=1)))
    holder_ok = math.isclose(c.M - smooth_max, model.lam * math.sqrt(10), rel_tol=1e-12)
    # size calculator at d = 1000, k = 2
    rng2 = np.random.default_rng(10)
    Xb = rng2.standard_normal((200, 1000)) / math.sqrt(1000)
    big = Dataset(Xb, Xb[:, :2] @ np.array([1.0, -1.0]) + 0.1 * rng2.standard_normal(200))
    anchor = np.zeros(1000)
    R = 0.01
    P = partition_layers(big, model, anchor)
    cb = smoothness_constants(model, big, anchor, R)
    dense = theoretical_plan(P, cb, 0.25, R, 0.1, 1000)
    sparse = theoretical_plan(P, cb, 0.25, R, 0.1, 1000, sparsity_k=2)
    tot_d, tot_s = int(sum(dense.uncapped)), int(sum(sparse.uncapped))
    ok = kkt_ok and holder_ok and tot_s < tot_d
    report(9, ok, f"KKT residual {kkt:.1e} (<= 1e-6); Holder term lam*sqrt(d) in M: {holder_ok}; "
                  f"plan totals before capping: sparse {tot_s} < dense {tot_d}")


# 10 ------------------------------------------------------------------------

def test_criterion_10_gmm():
    model = GmmModel(k=3, D=5)
    host = HostConfig(rel_loss_tol=1e-8, max_iters=500)
    seq_p, uni_p = [], []
    worst_rise = -np.inf
    for t in range(TRIALS):
        ds, labels = gen_gmm(10_000, 5, 3, 5.0, seed=900 + t)
        steps = []

        def recording_em(m, dset, cs, beta, config, ball=None, t=0):
            out = em_step(m, dset, cs, beta, config, ball=ball, t=t)
            steps.append(out)
            return out

        beta0 = pilot_solution(ds, model, 1000, 40 + t, host)
        res = run_sequential(ds, model, beta0, SequentialConfig(R=2.0, budget=1000, seed=60 + t, host=host),
                             stepper=recording_em)
        seq_p.append(purity(model.predict(res.beta, ds.features), labels))
        worst_rise = max([worst_rise] + [s.loss - s.loss_before for s in steps if not s.reseeded])
        init = model.init_hypothesis(ds, 80 + t)
        uni = run_host(model, ds, uniform_baseline(ds, 1000, 70 + t), init, host)
        uni_p.append(purity(model.predict(uni.beta, ds.features), labels))
    sp, up = float(np.mean(seq_p)), float(np.mean(uni_p))
    ok = sp >= 0.95 and sp >= up - 0.02 and worst_rise <= 1e-10
    report(10, ok, f"mean purity SeqCore {sp:.4f} (>= 0.95), UniSamp {up:.4f}; "
                   f"largest in-segment rise of weighted risk {worst_rise:.1e} (<= 1e-10)")


# 11 ------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path):
    spec = dict(
        model={"name": "ridge", "lam": 0.01},
        data={"generator": "linear", "n": 5000, "d": 10},
        methods=[{"name": "Original"}, {"name": "UniSamp", "budget": 300}, {"name": "ImpSamp", "budget": 300},
                 {"name": "SeqCore", "budget": 300, "R": 0.5}, {"name": "OneShot", "budget": 300}],
        trials=2,
        seed=123,
    )
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run_experiment(ExperimentSpec(**spec, output=str(a)))
    run_experiment(ExperimentSpec(**spec, output=str(b)), workers=2)

    def strip(path):
        import json

        rows = [json.loads(l) for l in path.read_text().splitlines()]
        for r in rows:
            for k in WALL_TIME_FIELDS:
                r.pop(k)
        return rows

    ra, rb = strip(a), strip(b)
    ok = ra == rb and len(ra) == 10 and all(r["error"] is None for r in ra)
    report(11, ok, f"{len(ra)} records identical across two runs modulo {', '.join(WALL_TIME_FIELDS)}: {ra == rb}")
