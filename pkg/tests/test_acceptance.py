"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v`` or as a script.
Lines are also repeated in the pytest terminal summary.
"""
import time

import numpy as np
import pytest

from lesa.backbone import (BackboneConfig, GmmBackbone, GmmSpec, SynthBackbone, SynthParams, integrate_full)
from lesa.core import Schedule, read_trajectory, write_trajectory
from lesa.evalx import Method, evaluate_seed, run_accelerated
from lesa.forecast import DiffTable, table_update, taylor_forecast
from lesa.predictor import load_model, make_predictor, model_bytes, offsets, predict, predict_backward, save_model
from lesa.schedule import StageConfig, build_plan, flop_account
from lesa.spline_kan import SplineGrid, bspline_basis, kan_backward, kan_forward, mlp_backward, mlp_forward, MlpScalar
from lesa.train import TrainConfig, prepare_dataset, train, train_closed_loop, train_gt_guided

from .conftest import ACCEPTANCE, rel_err
from .test_predictor import _l1, _random_expert
from .test_spline_kan import _fd_input, _fd_params, _random_kan

H = 1e-5
TRAIN_SEEDS = range(64)
SYNTH_HELD_OUT = range(1000, 1020)
GMM_HELD_OUT = range(5000, 5020)
BENCH_CFG = TrainConfig(lr=1e-3, epochs_gt=20, epochs_cl=40)


def grad_err(analytic, numeric):
    """Largest deviation relative to the gradient tensor's scale.

    Element-wise ratios on entries far below the tensor scale measure the
    O(h^2) truncation of the difference quotient rather than the backward pass.
    """
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-4))


def verdict(n, title, ok, detail, started, limit):
    elapsed = time.perf_counter() - started
    ok = bool(ok) and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {n} {title}: {detail} ({elapsed:.1f}s, limit {limit:g}s)"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1

def test_c1_flop_arithmetic():
    t0 = time.perf_counter()
    table = {5: (13, 3.85), 7: (10, 5.00), 10: (8, 6.25)}
    got, ok = [], True
    for N, (full, speedup) in table.items():
        plan = build_plan(StageConfig(50, N, (16, 41)))
        rep = flop_account(plan)
        ok &= plan.full_count == full and abs(rep.speedup - speedup) <= 0.01
        got.append(f"N={N}: {plan.full_count} full, {rep.speedup:.3f}x")
    verdict(1, "FLOP arithmetic", ok, "; ".join(got), t0, 1)


# ---------------------------------------------------------------- 2

def test_c2_taylor_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    cases = 0
    for m in (0, 1, 2):
        for N in range(2, 11):
            coef = rng.normal(size=(m + 1, 3))
            start = int(rng.integers(0, 20))

            def poly(step):
                return sum(c * float(step) ** i for i, c in enumerate(coef))

            table = DiffTable(N, m)
            for j in range(m + 1):
                table = table_update(table, poly(start + j * N), start + j * N)
            newest = start + m * N
            for k in range(1, N):
                fc = taylor_forecast(table, k, m)
                truth = poly(newest + k)
                worst = max(worst, float(np.max(np.abs(fc.value - truth)) / np.max(np.abs(truth))))
                cases += 1 if fc.order == m else 0
    expected = sum(N - 1 for N in range(2, 11)) * 3
    verdict(2, "Taylor exactness", worst < 1e-9 and cases == expected,
            f"{cases} forecasts, max rel err {worst:.2e}", t0, 5)


# ---------------------------------------------------------------- 3

def test_c3_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {"kan": 0.0, "mlp": 0.0, "expert-kan": 0.0, "expert-mlp": 0.0}
    elementwise = 0.0
    counts = dict.fromkeys(worst, 0)

    while counts["kan"] < 30:
        kan, dt, ok = _random_kan(rng)
        if not ok:
            continue
        dalpha = rng.normal()
        _, cache = kan_forward(kan, dt)
        grads, ddt = kan_backward(kan, dt, cache, dalpha)
        fd = _fd_params(kan, kan_forward, dt)
        pairs = [(grads[k], dalpha * fd[k]) for k in grads] + [(ddt, dalpha * _fd_input(kan, kan_forward, dt))]
        errs = [grad_err(a, n) for a, n in pairs]
        elementwise = max(elementwise, *(rel_err(a, n) for a, n in pairs))
        worst["kan"] = max(worst["kan"], *errs)
        counts["kan"] += 1

    while counts["mlp"] < 30:
        L, Hd = rng.integers(1, 8), rng.integers(1, 12)
        mlp = MlpScalar(rng.normal(0, 1.5, (Hd, L)), rng.normal(size=Hd), rng.normal(size=Hd))
        dt = rng.uniform(-1, 1, L)
        dalpha = rng.normal()
        _, cache = mlp_forward(mlp, dt)
        grads, ddt = mlp_backward(mlp, dt, cache, dalpha)
        fd = _fd_params(mlp, mlp_forward, dt)
        pairs = [(grads[k], dalpha * fd[k]) for k in grads] + [(ddt, dalpha * _fd_input(mlp, mlp_forward, dt))]
        errs = [grad_err(a, n) for a, n in pairs]
        elementwise = max(elementwise, *(rel_err(a, n) for a, n in pairs))
        worst["mlp"] = max(worst["mlp"], *errs)
        counts["mlp"] += 1

    for kind in ("kan", "mlp"):
        key = f"expert-{kind}"
        while counts[key] < 30:
            e, hist, sched, step = _random_expert(rng, kind)
            h, cache = predict(e, hist, sched, step)
            target = h + rng.choice([-1, 1], h.size) * rng.uniform(0.05, 1.0, h.size)
            if kind == "kan":
                z = e.modulator.a @ offsets(sched, step)
                if np.min(np.abs(z[:, None] - e.modulator.grid.knots[None, :])) < 1e-3:
                    continue
            grads = predict_backward(e, cache, np.sign(h - target) / h.size)
            for name, p in e.params().items():
                fd = np.zeros(p.shape)
                it = np.nditer(p, flags=["multi_index"])
                for _ in it:
                    i = it.multi_index
                    old = p[i].copy()
                    p[i] = old + H
                    up = _l1(e, hist, sched, step, target)
                    p[i] = old - H
                    dn = _l1(e, hist, sched, step, target)
                    p[i] = old
                    fd[i] = (up - dn) / (2 * H)
                worst[key] = max(worst[key], grad_err(grads[name], fd))
                elementwise = max(elementwise, rel_err(grads[name], fd))
            counts[key] += 1

    detail = ", ".join(f"{k} {counts[k]} configs max {v:.1e}" for k, v in worst.items())
    detail += f"; element-wise max {elementwise:.1e}"
    verdict(3, "gradient correctness", max(worst.values()) < 1e-6, detail, t0, 30)


# ---------------------------------------------------------------- 4

def test_c4_spline_soundness():
    t0 = time.perf_counter()
    grid = SplineGrid()
    z = np.random.default_rng(4).uniform(-1.5 * grid.hi, 1.5 * grid.hi, 10_000)
    B = bspline_basis(grid, z)
    pou = float(np.max(np.abs(B.sum(axis=1) - 1)))
    nnz = int(np.max(np.count_nonzero(B, axis=1)))
    verdict(4, "spline soundness", pou < 1e-12 and nnz <= grid.order + 1,
            f"max |sum B - 1| = {pou:.1e}, max nonzero = {nnz}", t0, 1)


# ---------------------------------------------------------------- 5

@pytest.mark.slow
def test_c5_overfit():
    t0 = time.perf_counter()
    data = [integrate_full(SynthBackbone(SynthParams(dim=16)), Schedule(50), seed=0)]
    cfg = TrainConfig(lr=3e-3, epochs_gt=2000, lr_schedule="cosine")
    _, curve = train_gt_guided(make_predictor(50, 16), data, cfg, build_plan(StageConfig(50, 10)))
    ratio = curve[-1] / curve[0]
    verdict(5, "overfit sanity", len(curve) == 2000 and ratio < 0.01,
            f"final/initial L1 = {ratio:.4f} after {len(curve)} steps", t0, 60)


# ---------------------------------------------------------------- 6, 7

@pytest.fixture(scope="module")
def synth_setup():
    bb = SynthBackbone(SynthParams(dim=16))
    data = [integrate_full(bb, Schedule(50), seed=s) for s in TRAIN_SEEDS]
    refs = {s: integrate_full(bb, Schedule(50), seed=s) for s in SYNTH_HELD_OUT}
    return bb, data, refs, build_plan(StageConfig(50, 10))


def _mae(setup, method):
    bb, _, refs, plan = setup
    return float(np.mean([evaluate_seed(bb, plan, method, s, refs[s]).feature_mae for s in SYNTH_HELD_OUT]))


@pytest.fixture(scope="module")
def segmented_kan(synth_setup):
    t0 = time.perf_counter()
    _, data, _, plan = synth_setup
    sp, _, _ = train(make_predictor(50, 16), data, BENCH_CFG, plan)
    return sp, time.perf_counter() - t0


@pytest.mark.slow
def test_c6_method_ordering(synth_setup, segmented_kan):
    t0 = time.perf_counter()
    sp, train_time = segmented_kan
    lesa = _mae(synth_setup, Method("lesa", model=sp))
    taylor = _mae(synth_setup, Method("taylor", 2))
    reuse = _mae(synth_setup, Method("reuse"))
    verdict(6, "method ordering", lesa < taylor < reuse,
            f"feature MAE lesa {lesa:.4f} < taylor:2 {taylor:.4f} < reuse {reuse:.4f}",
            t0 - train_time, 300)


@pytest.mark.slow
def test_c7_ablation_direction(synth_setup, segmented_kan):
    t0 = time.perf_counter()
    _, data, _, plan = synth_setup
    seg, seg_time = segmented_kan
    mlp, _, _ = train(make_predictor(50, 16, boundaries=None, modulator="mlp"), data, BENCH_CFG, plan)
    a = _mae(synth_setup, Method("lesa", model=seg))
    b = _mae(synth_setup, Method("lesa", model=mlp))
    verdict(7, "ablation direction", a <= b, f"segmented KAN {a:.4f} <= unsegmented MLP {b:.4f}",
            t0 - seg_time, 600)


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_c8_closed_loop_benefit():
    t0 = time.perf_counter()
    cfg = BackboneConfig(backbone="gmm", dim=8)
    bb = cfg.build()
    data = prepare_dataset(cfg, TRAIN_SEEDS)
    plan = build_plan(StageConfig(50, 10))
    refs = {s: integrate_full(bb, Schedule(50), seed=s) for s in GMM_HELD_OUT}

    def median_err(sp):
        return float(np.median([evaluate_seed(bb, plan, Method("lesa", model=sp), s, refs[s]).endpoint_rel_err
                                for s in GMM_HELD_OUT]))

    sp, _ = train_gt_guided(make_predictor(50, 8), data, BENCH_CFG, plan)
    gt = median_err(sp)
    sp, _ = train_closed_loop(sp, data, plan, BENCH_CFG)
    cl = median_err(sp)
    verdict(8, "closed-loop benefit", cl <= gt, f"median endpoint err CL {cl:.4f} <= GT-only {gt:.4f}", t0, 600)


# ---------------------------------------------------------------- 9

def test_c9_end_to_end_integrity(tmp_path):
    t0 = time.perf_counter()
    checks = []
    for bb in (GmmBackbone(GmmSpec.default()), SynthBackbone(SynthParams(dim=16))):
        for seed in (0, 1, 2):
            ref = integrate_full(bb, Schedule(50), seed=seed)
            res = run_accelerated(bb, build_plan(StageConfig(50, 10)), Method("full"), seed)
            checks.append(res.trajectory.features.tobytes() == ref.features.tobytes()
                          and res.trajectory.states.tobytes() == ref.states.tobytes())
            path = tmp_path / f"{bb.tag}_{seed}.traj"
            write_trajectory(ref, path)
            back = read_trajectory(path)
            write_trajectory(back, tmp_path / "again.traj")
            checks.append(back == ref.quantized()
                          and (tmp_path / "again.traj").read_bytes() == path.read_bytes())
    rng = np.random.default_rng(9)
    for kw in ({}, {"modulator": "mlp", "hidden": 16}, {"boundaries": None}):
        sp = make_predictor(50, 8, **kw)
        for e in sp.experts:
            for p in e.params().values():
                p[...] = rng.normal(size=p.shape)
        save_model(sp, tmp_path / "m.lesm")
        back = load_model(tmp_path / "m.lesm")
        checks.append(model_bytes(back) == model_bytes(sp)
                      and all(a.params()[k].tobytes() == b.params()[k].tobytes()
                              for a, b in zip(sp.experts, back.experts) for k in a.params()))
    verdict(9, "end-to-end integrity", all(checks), f"{sum(checks)}/{len(checks)} bit-exact checks", t0, 10)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
