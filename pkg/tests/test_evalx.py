from math import erf, sqrt

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from lesa.backbone import GmmBackbone, GmmSpec, LinearStreamBackbone, SynthBackbone, SynthParams, integrate_full
from lesa.core import LesaError, Schedule, Trajectory, ValidationError
from lesa.evalx import (Method, Report, ReportRow, compare, cosine_curve, evaluate_seed, parse_method,
                        pca_components, pca_project, psnr, rasterize, run_accelerated, ssim)
from lesa.predictor import make_predictor
from lesa.schedule import StageConfig, StepPlan, build_plan, flop_account


def traj_from(features):
    f = np.asarray(features, dtype=float)
    return Trajectory(Schedule(len(f)).timesteps, f, f)


def plain_plan(S, N):
    return StepPlan(tuple("F" if s % N == 0 or s == S - 1 else "P" for s in range(S)), N, ())


# ----------------------------------------------------------- runner

@pytest.mark.parametrize("bb", [GmmBackbone(GmmSpec.default()), SynthBackbone(SynthParams(dim=5))])
@pytest.mark.parametrize("N", [1, 5, 10])
def test_full_method_is_reference(bb, N):
    plan = build_plan(StageConfig(50, N))
    res = run_accelerated(bb, plan, Method("full"), seed=4)
    assert res.trajectory == integrate_full(bb, Schedule(50), seed=4)
    assert res.plan.full_count == 50


def test_reuse_copies_last_full():
    bb = GmmBackbone(GmmSpec.default())
    res = run_accelerated(bb, build_plan(StageConfig(50, 2)), Method("reuse"), seed=1)
    f = res.trajectory.features
    for s in res.plan.predict_steps():
        assert f[s].tobytes() == f[s - 1].tobytes()
        assert res.plan.is_full(s - 1)


def test_taylor1_exact_on_linear_stream():
    bb = LinearStreamBackbone(np.array([0.3, -1.0]), np.array([0.02, 0.05]))
    ref = integrate_full(bb, Schedule(50), seed=0)
    for plan, method in [(plain_plan(50, 10), Method("taylor", 1)),
                         (build_plan(StageConfig(50, 10)), Method("taylor", 1, reset_at_stages=False))]:
        res = run_accelerated(bb, plan, method, seed=0)
        # one full step only supports reuse; once two exist the forecast is exact
        exact = [s for s in range(50) if res.orders[s] != 0]
        assert exact == list(range(0, 1)) + list(range(10, 50))
        np.testing.assert_allclose(res.trajectory.features[exact], ref.features[exact], rtol=0, atol=1e-12)
        f_end = res.trajectory.features[-1]
        assert np.linalg.norm(f_end - ref.features[-1]) <= 1e-9 * np.linalg.norm(ref.features[-1])


def test_stage_reset_falls_back_after_boundary():
    bb = LinearStreamBackbone(np.zeros(1), np.ones(1))
    res = run_accelerated(bb, build_plan(StageConfig(50, 10)), Method("taylor", 2), seed=0)
    assert res.orders[17] == 0 and res.orders[21] == 1 and res.orders[31] == 2
    assert res.orders[16] == -1


def test_lesa_method_needs_matching_model():
    bb = GmmBackbone(GmmSpec.default())
    plan = build_plan(StageConfig(50, 10))
    with pytest.raises(LesaError):
        run_accelerated(bb, plan, Method("lesa"), 0)
    with pytest.raises(ValidationError):
        run_accelerated(bb, plan, Method("lesa", model=make_predictor(50, 3)), 0)
    res = run_accelerated(bb, plan, Method("lesa", model=make_predictor(50, 8)), 0)
    # zero-initialised residual behaves exactly like reuse
    reuse = run_accelerated(bb, plan, Method("reuse"), 0)
    assert res.trajectory == reuse.trajectory


def test_parse_method():
    assert parse_method("taylor:1").order == 1
    assert parse_method("Taylor").order == 2
    assert parse_method("reuse").name == "reuse"
    assert parse_method("lesa", make_predictor(50, 2, modulator="mlp")).name == "lesa-mlp"
    for bad in ("taylor:x", "magic", "taylor:3"):
        with pytest.raises(ValidationError):
            parse_method(bad)


# ----------------------------------------------------------- diagnostics

def test_cosine_curve():
    np.testing.assert_allclose(cosine_curve(traj_from(np.ones((5, 3)))), 1.0)
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(cosine_curve(traj_from([v, -v, v, -v])), -1.0)
    with pytest.raises(ValidationError, match="step 1"):
        cosine_curve(traj_from([v, 0 * v, v]))


def test_pca_rank_one_line():
    u = np.array([1.0, 2.0, -1.0])
    P = pca_project(traj_from(np.outer(np.arange(10.0), u)))
    assert P.shape == (10, 2)
    assert np.max(np.abs(P[:, 1])) < 1e-9


def test_pca_matches_eigh():
    X = np.random.default_rng(4).normal(size=(60, 5)) @ np.diag([3.0, 2.0, 1.0, 0.5, 0.2])
    (l1, v1), (l2, v2) = pca_components(X)
    w, V = np.linalg.eigh(np.cov(X.T))
    assert l1 == pytest.approx(w[-1], rel=1e-8) and l2 == pytest.approx(w[-2], rel=1e-8)
    assert abs(abs(v1 @ V[:, -1]) - 1) < 1e-8 and abs(abs(v2 @ V[:, -2]) - 1) < 1e-8
    for v in (v1, v2):
        assert v[np.nonzero(np.abs(v) > 1e-12)[0][0]] > 0


def test_pca_isotropic_split():
    X = np.random.default_rng(8).normal(size=(500, 2))
    (l1, _), (l2, _) = pca_components(X)
    assert 0.3 <= l1 / (l1 + l2) <= 0.7


def test_pca_captures_max_variance_on_d3():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3)) @ rng.normal(size=(3, 3))
    Xc = X - X.mean(axis=0)
    (_, v1), (_, v2) = pca_components(X)
    ours = np.sum((Xc @ np.stack([v1, v2], 1)) ** 2)
    for _ in range(2000):
        Q, _ = np.linalg.qr(rng.normal(size=(3, 2)))
        assert np.sum((Xc @ Q) ** 2) <= ours + 1e-9


def test_pca_rank_zero():
    with pytest.raises(ValidationError):
        pca_project(traj_from(np.ones((5, 2))))
    with pytest.raises(ValidationError):
        pca_project(traj_from(np.ones((2, 2))))


def test_rasterize_single_point():
    g = rasterize(np.zeros((1, 4)))
    assert g.shape == (64, 64) and np.count_nonzero(g) == 1 and g.max() == 1.0


def test_rasterize_translation():
    pts = np.random.default_rng(0).uniform(-4, 4, (200, 2))
    width = 12.0 / 64
    a, b = rasterize(pts), rasterize(pts + [width, 0.0])
    np.testing.assert_array_equal(a[:-1], b[1:])


def test_rasterize_gaussian_center_mass():
    pts = np.random.default_rng(1).normal(size=(10_000, 2))
    g = rasterize(pts)
    frac = g[28:36, 28:36].sum() / g.sum()
    # the central 8x8 block spans [-0.75, 0.75]^2 at R=6
    expected = erf(0.75 / sqrt(2)) ** 2
    assert abs(frac - expected) < 4 * sqrt(expected * (1 - expected) / 10_000)


def test_rasterize_out_of_range_is_empty():
    assert rasterize(np.full((3, 2), 100.0)).sum() == 0.0


def test_psnr_cases():
    a = np.random.default_rng(0).uniform(size=(16, 16))
    assert psnr(a, a) == 100.0
    assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == 0.0
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)
    with pytest.raises(ValidationError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_matches_skimage():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.uniform(size=(64, 64))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                    data_range=1.0)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_ordering_and_bounds():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a = rng.uniform(size=(64, 64))
        shifted = np.clip(a + rng.choice([-0.05, 0.05]), 0, 1)
        other = rng.uniform(size=(64, 64))
        assert ssim(a, shifted) > ssim(a, other)
        assert -1.0 <= ssim(a, other) <= 1.0
    assert ssim(a, a) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# ----------------------------------------------------------- reports

def test_compare_rows():
    bb = GmmBackbone(GmmSpec.default())
    rep = compare([Method("full"), Method("reuse"), Method("taylor", 1)], [10], range(20), bb)
    full = rep.row("full", 10)
    assert full.endpoint_rel_err == 0.0 and full.speedup == 1.0 and full.psnr_db == 100.0
    assert rep.row("taylor:1", 10).endpoint_rel_err <= rep.row("reuse", 10).endpoint_rel_err
    assert rep.row("reuse", 10).speedup == flop_account(build_plan(StageConfig(50, 10))).speedup
    assert rep.row("reuse", 10).full_steps == 8


def test_compare_missing_model():
    with pytest.raises(LesaError, match="lesa"):
        compare([Method("lesa")], [10], [0], GmmBackbone(GmmSpec.default()))


def test_report_csv_roundtrip():
    rep = Report((ReportRow("reuse", 10, 8, 6.25, 1 / 3, 0.1234567891234, 31.2, 0.91),
                  ReportRow("full", 10, 50, 1.0, 0.0, 0.0, 100.0, 1.0)))
    text = rep.to_csv()
    assert text.splitlines()[0] == "method,N,full_steps,speedup,endpoint_rel_err,feature_mae,psnr_db,ssim"
    assert text.splitlines()[1] == "reuse,10,8,6.25,0.333333333,0.123456789,31.2,0.91"
    assert Report.from_csv(text) == rep
    assert Report.from_csv(text).to_csv() == text
    with pytest.raises(ValidationError):
        Report.from_csv("a,b\n")


def test_evaluate_seed_full_is_zero_error():
    bb = SynthBackbone(SynthParams(dim=4))
    m = evaluate_seed(bb, build_plan(StageConfig(50, 10)), Method("full"), 3)
    assert m.endpoint_rel_err == 0.0 and m.feature_mae == 0.0
