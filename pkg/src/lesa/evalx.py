"""Accelerated inference, trajectory diagnostics and method comparison."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .backbone import Backbone, CounterRng, integrate_full
from .core import IntegrationError, LesaError, Schedule, Trajectory, ValidationError
from .forecast import DiffTable, reuse_forecast, table_update, taylor_forecast
from .predictor import DEFAULT_BOUNDARIES, StagePredictor, predict
from .schedule import CostModel, StageConfig, StepPlan, build_plan, flop_account

REPORT_HEADER = ["method", "N", "full_steps", "speedup", "endpoint_rel_err", "feature_mae", "psnr_db", "ssim"]


# ----------------------------------------------------------------- methods

@dataclass(frozen=True, eq=False)
class Method:
    """How predicted steps obtain a feature.

    kind is one of ``full``, ``reuse``, ``taylor`` or ``lesa``; ``model`` is
    required for ``lesa`` (KAN or MLP modulated).  Taylor tables are reset at
    stage boundaries unless ``reset_at_stages`` is false.
    """

    kind: str
    order: int = 0
    model: StagePredictor | None = None
    label: str = ""
    literal: bool = False
    reset_at_stages: bool = True

    def __post_init__(self):
        if self.kind not in ("full", "reuse", "taylor", "lesa"):
            raise ValidationError(f"unknown method {self.kind!r}")
        if self.kind == "taylor" and not 0 <= self.order <= 2:
            raise ValidationError(f"taylor order must lie in [0, 2], got {self.order}")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "taylor":
            return f"taylor:{self.order}"
        if self.kind == "lesa" and self.model is not None and self.model.experts[0].modulator.kind == 1:
            return "lesa-mlp"
        return self.kind


def parse_method(text: str, model: StagePredictor | None = None) -> Method:
    """``full``, ``reuse``, ``taylor:m`` or ``lesa``."""
    text = text.strip().lower()
    if text.startswith("taylor"):
        _, _, m = text.partition(":")
        try:
            return Method("taylor", int(m or 2))
        except ValueError as exc:
            raise ValidationError(f"bad taylor order in {text!r}") from exc
    if text in ("lesa", "lesa-mlp", "lesa-kan"):
        return Method("lesa", model=model)
    return Method(text)


# ------------------------------------------------------------------ runner

@dataclass(frozen=True)
class RunResult:
    trajectory: Trajectory
    plan: StepPlan
    orders: tuple       # forecast order used at each step (-1 for full steps)


def run_accelerated(backbone: Backbone, plan: StepPlan, method: Method, seed: int,
                    schedule: Schedule | None = None) -> RunResult:
    """Walk the plan, substituting forecast features on predicted steps.

    The solver consumes whichever feature the step emitted.
    """
    S = plan.num_steps
    schedule = schedule or Schedule(S)
    if schedule.num_steps != S:
        raise ValidationError("plan and schedule lengths differ")
    if method.kind == "full":
        plan = StepPlan.all_full(S)
    if method.kind == "lesa":
        if method.model is None:
            raise LesaError(f"method {method.name!r} needs a trained model")
        if method.model.num_steps != S or method.model.dim != backbone.dim:
            raise ValidationError("model shape does not match the run")
    ts = schedule.timesteps
    mirrors = getattr(backbone, "mirrors_features", False)
    resets = set(plan.boundaries) if method.reset_at_stages else set()
    x = backbone.initial_state(seed)
    table = DiffTable(max(plan.interval, 1), max(method.order, 0))
    history: list[np.ndarray] = []
    feats = np.empty((S, backbone.dim))
    states = np.empty((S, backbone.state_dim))
    orders = []
    for s in range(S):
        if plan.is_full(s):
            f = backbone.feature(s, ts[s], x, seed)
            if s in resets:
                table = DiffTable(table.N, table.m_max)
            table = table_update(table, f, s)
            orders.append(-1)
        elif method.kind == "reuse":
            f = reuse_forecast(table)
            orders.append(0)
        elif method.kind == "taylor":
            fc = taylor_forecast(table, s - table.steps[0], method.order, method.literal)
            f = fc.value
            orders.append(fc.order)
        else:
            f, _ = predict(method.model.expert(s), history, schedule, s)
            orders.append(0)
        if not np.all(np.isfinite(f)):
            raise IntegrationError(f"non-finite feature at step {s}")
        history.append(f)
        feats[s] = f
        states[s] = f if mirrors else x
        if s + 1 < S:
            x = backbone.advance(s, x, f, ts[s], ts[s + 1])
    traj = Trajectory(ts, feats, states, seed, backbone.tag)
    return RunResult(traj, plan, tuple(orders))


# ------------------------------------------------------------ diagnostics

def cosine_curve(traj: Trajectory) -> np.ndarray:
    f = traj.features
    norms = np.linalg.norm(f, axis=1)
    zero = np.nonzero(norms == 0)[0]
    if zero.size:
        raise ValidationError(f"zero-norm feature at step {zero[0]}")
    c = np.einsum("sd,sd->s", f[:-1], f[1:]) / (norms[:-1] * norms[1:])
    return np.clip(c, -1.0, 1.0)


def _power_iteration(C: np.ndarray, v0: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    v = v0 / np.linalg.norm(v0)
    for _ in range(max_iter):
        w = C @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v
        w /= nw
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return float(v @ C @ v), v


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.nonzero(np.abs(v) > 1e-12)[0]
    return -v if nz.size and v[nz[0]] < 0 else v


def pca_components(features: np.ndarray, tol: float = 1e-9, max_iter: int = 1000):
    """Top-two (eigenvalue, eigenvector) pairs of the step covariance."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] < 3:
        raise ValidationError("PCA needs at least 3 steps")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    scale = np.trace(C)
    if scale <= 1e-300:
        raise ValidationError("PCA of rank-0 data")
    start = CounterRng(0x5043).normal(2 * C.shape[0]).reshape(2, -1) + 1e-3
    lam1, v1 = _power_iteration(C, start[0], tol, max_iter)
    v1 = _fix_sign(v1)
    C2 = C - lam1 * np.outer(v1, v1)
    if C.shape[0] == 1:
        return (lam1, v1), (0.0, np.zeros(1))
    u = start[1] - (start[1] @ v1) * v1
    lam2, v2 = _power_iteration(C2, u, tol, max_iter)
    v2 = v2 - (v2 @ v1) * v1
    n2 = np.linalg.norm(v2)
    v2 = _fix_sign(v2 / n2) if n2 > 0 else v2
    if lam2 <= 1e-12 * scale:
        lam2 = max(lam2, 0.0)
    return (lam1, v1), (lam2, v2)


def pca_project(traj_or_features) -> np.ndarray:
    """Per-step coordinates on the top-two principal directions, shape (S, 2)."""
    X = traj_or_features.features if isinstance(traj_or_features, Trajectory) else np.asarray(traj_or_features)
    (_, v1), (_, v2) = pca_components(X)
    Xc = X - X.mean(axis=0)
    return np.stack([Xc @ v1, Xc @ v2], axis=1)


def rasterize(points, bins: int = 64, radius: float = 6.0) -> np.ndarray:
    """Normalised 2-D histogram of the first two coordinates over [-R, R]^2."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if P.shape[0] < 1:
        raise ValidationError("rasterize needs at least one point")
    if radius <= 0:
        raise ValidationError("radius must be positive")
    xy = P[:, :2] if P.shape[1] >= 2 else np.column_stack([P[:, 0], np.zeros(len(P))])
    width = 2.0 * radius / bins
    idx = np.floor((xy + radius) / width).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < bins), axis=1)
    grid = np.zeros((bins, bins))
    np.add.at(grid, (idx[ok, 0], idx[ok, 1]), 1.0)
    peak = grid.max()
    return grid / peak if peak > 0 else grid


def psnr(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 100.0
    return min(100.0, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = np.apply_along_axis(lambda r: np.convolve(r, g, mode="valid"), 1, img)
    return np.apply_along_axis(lambda c: np.convolve(c, g, mode="valid"), 0, rows)


def ssim(a, b, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-covered Gaussian windows (data range 1)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ValidationError(f"grid smaller than the {window}x{window} window")
    C1, C2 = 0.01**2, 0.03**2
    g = _gaussian_window(window, sigma)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * sab + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (saa + sbb + C2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


# ----------------------------------------------------------------- reports

def _sig9(x: float) -> float:
    return float(f"{x:.9g}")


@dataclass(frozen=True)
class ReportRow:
    method: str
    N: int
    full_steps: int
    speedup: float
    endpoint_rel_err: float
    feature_mae: float
    psnr_db: float
    ssim: float

    def __post_init__(self):
        for f in ("speedup", "endpoint_rel_err", "feature_mae", "psnr_db", "ssim"):
            object.__setattr__(self, f, _sig9(float(getattr(self, f))))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "full_steps", int(self.full_steps))


@dataclass(frozen=True)
class Report:
    rows: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r.method, r.N, r.full_steps] + [f"{getattr(r, f):.9g}" for f in REPORT_HEADER[3:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Report":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != REPORT_HEADER:
            raise ValidationError(f"unexpected report header {header}")
        rows = []
        for rec in reader:
            if rec:
                rows.append(ReportRow(rec[0], int(rec[1]), int(rec[2]), *map(float, rec[3:])))
        return cls(tuple(rows))

    def row(self, method: str, N: int) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.N == N:
                return r
        raise KeyError((method, N))


@dataclass(frozen=True)
class SeedMetrics:
    endpoint_rel_err: float
    feature_mae: float
    endpoint: np.ndarray


def endpoint_rel_err(ref: Trajectory, test: Trajectory) -> float:
    denom = np.linalg.norm(ref.endpoint)
    diff = np.linalg.norm(test.endpoint - ref.endpoint)
    return float(diff / denom) if denom > 0 else float(diff)


def predicted_feature_mae(ref: Trajectory, test: Trajectory, plan: StepPlan) -> float:
    steps = plan.predict_steps()
    if not steps:
        return 0.0
    return float(np.mean(np.abs(test.features[steps] - ref.features[steps])))


def evaluate_seed(backbone: Backbone, plan: StepPlan, method: Method, seed: int,
                  reference: Trajectory | None = None) -> SeedMetrics:
    sched = Schedule(plan.num_steps)
    ref = reference if reference is not None else integrate_full(backbone, sched, seed=seed)
    res = run_accelerated(backbone, plan, method, seed, sched)
    return SeedMetrics(endpoint_rel_err(ref, res.trajectory),
                       predicted_feature_mae(ref, res.trajectory, res.plan),
                       res.trajectory.endpoint.copy())


def compare(methods, Ns, seeds, backbone: Backbone, steps: int = 50,
            boundaries=DEFAULT_BOUNDARIES, cost: CostModel = CostModel(),
            raster_radius: float = 6.0) -> Report:
    """One report row per (method, N), averaged over ``seeds``."""
    seeds = list(seeds)
    if not seeds:
        raise ValidationError("compare needs at least one seed")
    sched = Schedule(steps)
    refs = {s: integrate_full(backbone, sched, seed=s) for s in seeds}
    ref_grid = rasterize(np.stack([refs[s].endpoint for s in seeds]), radius=raster_radius)
    rows = []
    for method in methods:
        if method.kind == "lesa" and method.model is None:
            raise LesaError(f"method {method.name!r} has no model loaded")
        for N in Ns:
            plan = StepPlan.all_full(steps) if method.kind == "full" else build_plan(StageConfig(steps, N, tuple(boundaries)))
            metrics = [evaluate_seed(backbone, plan, method, s, refs[s]) for s in seeds]
            grid = rasterize(np.stack([m.endpoint for m in metrics]), radius=raster_radius)
            rows.append(ReportRow(
                method.name, N, plan.full_count, flop_account(plan, cost).speedup,
                float(np.mean([m.endpoint_rel_err for m in metrics])),
                float(np.mean([m.feature_mae for m in metrics])),
                psnr(ref_grid, grid), ssim(ref_grid, grid)))
    return Report(tuple(rows))
