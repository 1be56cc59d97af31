"""Dataset preparation and the two training phases.

Both phases minimise the mean absolute error between predicted and
ground-truth features on the steps a plan marks as predicted.  One
optimizer step is taken per trajectory.  The first phase conditions on
ground-truth histories; the second walks the plan like inference does, so
predicted steps feed the expert's own (stop-gradient) outputs back into the
history.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, integrate_full
from .core import LesaError, Trajectory, ValidationError, write_trajectory
from .predictor import DEFAULT_BOUNDARIES, StagePredictor, expert_for_step, predict, predict_backward
from .schedule import StageConfig, StepPlan, build_plan

log = logging.getLogger(__name__)


class TrainingError(LesaError, RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    epochs_gt: int = 1
    epochs_cl: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    N: int = 10
    lr_schedule: str = "constant"     # or "cosine", decayed to zero over each phase

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValidationError("lr and clip_norm must be positive")
        if self.epochs_gt < 0 or self.epochs_cl < 0:
            raise ValidationError("epoch counts must be >= 0")
        if self.N < 1:
            raise ValidationError("interval N must be >= 1")


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)     # per-parameter step counts


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict, clip_norm: float) -> dict:
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def lr_at(cfg: TrainConfig, k: int, total: int) -> float:
    """Learning rate for optimizer step ``k`` of ``total`` in one phase."""
    if cfg.lr_schedule == "constant" or total <= 1:
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * k / total))


def optimizer_step(params: dict, grads: dict, opt: OptimState, cfg: TrainConfig,
                   lr: float | None = None) -> dict:
    """Clipped Adam update with decoupled weight decay, applied in place.

    Only parameters named in ``grads`` are touched.  ``lr`` overrides ``cfg.lr``.
    """
    lr = cfg.lr if lr is None else lr
    for k, g in grads.items():
        if k not in params:
            raise ValidationError(f"gradient for unknown parameter {k!r}")
        if params[k].shape != np.shape(g):
            raise ValidationError(f"gradient {k!r} has shape {np.shape(g)}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {k!r}")
    grads = clip_gradients(grads, cfg.clip_norm)
    b1, b2 = cfg.beta1, cfg.beta2
    for k, g in grads.items():
        p = params[k]
        m = opt.m.get(k)
        if m is None:
            m = opt.m[k] = np.zeros_like(p)
            opt.v[k] = np.zeros_like(p)
            opt.t[k] = 0
        v = opt.v[k]
        opt.t[k] += 1
        t = opt.t[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p[...] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps) - lr * cfg.weight_decay * p
    return params


# ------------------------------------------------------------------ data

def prepare_dataset(config: BackboneConfig, seeds, out_dir=None) -> list[Trajectory]:
    """One full-compute trajectory per seed, optionally persisted."""
    seeds = list(seeds)
    if not seeds:
        raise ValidationError("prepare_dataset needs at least one seed")
    bb = config.build()
    sched = config.schedule
    out = []
    for seed in seeds:
        try:
            traj = integrate_full(bb, sched, seed=seed)
        except LesaError as exc:
            raise type(exc)(f"seed {seed}: {exc}") from exc
        if out_dir is not None:
            write_trajectory(traj, Path(out_dir) / trajectory_filename(config.backbone, seed))
        out.append(traj)
    return out


def trajectory_filename(tag: str, seed: int) -> str:
    return f"{tag}_{seed:06d}.traj"


# -------------------------------------------------------------- training

@dataclass(frozen=True)
class LogRow:
    phase: str
    epoch: int
    trajectory: int
    mean_l1: float


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "epoch", "trajectory", "mean_l1"])
        for r in rows:
            w.writerow([r.phase, r.epoch, r.trajectory, f"{r.mean_l1:.9g}"])


def default_plan(sp: StagePredictor, N: int) -> StepPlan:
    bounds = sp.boundaries if sp.boundaries is not None else DEFAULT_BOUNDARIES
    return build_plan(StageConfig(sp.num_steps, N, bounds))


def _param_table(sp: StagePredictor) -> dict:
    out = {}
    for i, e in enumerate(sp.experts):
        out.update({f"e{i}.{k}": v for k, v in e.params().items()})
    return out


def _check_data(sp: StagePredictor, data) -> None:
    if not data:
        raise ValidationError("training data is empty")
    for traj in data:
        if traj.num_steps != sp.num_steps or traj.dim != sp.dim:
            raise ValidationError(
                f"trajectory seed {traj.seed} is S={traj.num_steps}, D={traj.dim}; "
                f"predictor expects S={sp.num_steps}, D={sp.dim}")


class _Batch:
    """Accumulates per-expert gradients of the mean L1 loss over one trajectory."""

    def __init__(self, sp: StagePredictor):
        self.sp = sp
        self.grads: dict = {}
        self.losses: list[float] = []
        self._pending = []

    def add(self, step, h_hat, cache, target):
        err = h_hat - target
        self.losses.append(float(np.mean(np.abs(err))))
        self._pending.append((step, cache, np.sign(err) / err.size))

    def finish(self) -> float:
        n = len(self.losses)
        bad = [s for (s, _, _), l in zip(self._pending, self.losses) if not np.isfinite(l)]
        if bad:
            raise TrainingError(f"non-finite loss at steps {bad[:8]} (expert {expert_for_step(self.sp, bad[0])})")
        for step, cache, g in self._pending:
            idx = expert_for_step(self.sp, step) - 1
            expert = self.sp.experts[idx]
            for k, v in predict_backward(expert, cache, g / n).items():
                key = f"e{idx}.{k}"
                self.grads[key] = self.grads[key] + v if key in self.grads else v
        return float(np.mean(self.losses)) if n else 0.0


def _apply(sp, batch: _Batch, opt: OptimState, cfg: TrainConfig, params: dict, lr: float) -> float:
    loss = batch.finish()
    if batch.grads:
        optimizer_step(params, batch.grads, opt, cfg, lr)
        touched = {int(k.split(".", 1)[0][1:]) for k in batch.grads}
        for i in touched:
            sp.experts[i].bump()
    return loss


def train_gt_guided(sp: StagePredictor, data, cfg: TrainConfig = TrainConfig(), plan: StepPlan | None = None,
                    opt: OptimState | None = None, log_rows: list | None = None, epochs: int | None = None):
    """Ground-truth-history phase; returns the predictor and per-epoch mean losses."""
    _check_data(sp, data)
    plan = plan or default_plan(sp, cfg.N)
    opt = opt if opt is not None else OptimState()
    params = _param_table(sp)
    sched = sp.schedule
    steps = plan.predict_steps()
    n_epochs = cfg.epochs_gt if epochs is None else epochs
    total = n_epochs * len(data)
    curve = []
    for epoch in range(n_epochs):
        losses = []
        for ti, traj in enumerate(data):
            feats = traj.features
            batch = _Batch(sp)
            for s in steps:
                h_hat, cache = predict(sp.expert(s), feats[:s], sched, s)
                batch.add(s, h_hat, cache, feats[s])
            loss = _apply(sp, batch, opt, cfg, params, lr_at(cfg, epoch * len(data) + ti, total))
            losses.append(loss)
            if log_rows is not None:
                log_rows.append(LogRow("gt", epoch, ti, loss))
        curve.append(float(np.mean(losses)))
        log.debug("gt epoch %d mean L1 %.6g", epoch, curve[-1])
    return sp, curve


def train_closed_loop(sp: StagePredictor, data, plan: StepPlan | None = None, cfg: TrainConfig = TrainConfig(),
                      opt: OptimState | None = None, log_rows: list | None = None, epochs: int | None = None):
    """Autoregressive phase: predicted steps condition on earlier predictions."""
    _check_data(sp, data)
    plan = plan or default_plan(sp, cfg.N)
    if plan.num_steps != sp.num_steps:
        raise ValidationError("plan length does not match predictor")
    opt = opt if opt is not None else OptimState()
    params = _param_table(sp)
    sched = sp.schedule
    n_epochs = cfg.epochs_cl if epochs is None else epochs
    total = n_epochs * len(data)
    curve = []
    for epoch in range(n_epochs):
        losses = []
        for ti, traj in enumerate(data):
            feats = traj.features
            history: list[np.ndarray] = []
            batch = _Batch(sp)
            for s in range(sp.num_steps):
                if plan.is_full(s):
                    history.append(feats[s])
                    continue
                h_hat, cache = predict(sp.expert(s), history, sched, s)
                batch.add(s, h_hat, cache, feats[s])
                history.append(h_hat)
            loss = _apply(sp, batch, opt, cfg, params, lr_at(cfg, epoch * len(data) + ti, total))
            losses.append(loss)
            if log_rows is not None:
                log_rows.append(LogRow("cl", epoch, ti, loss))
        curve.append(float(np.mean(losses)) if losses else 0.0)
        log.debug("cl epoch %d mean L1 %.6g", epoch, curve[-1])
    return sp, curve


def train(sp: StagePredictor, data, cfg: TrainConfig = TrainConfig(), plan: StepPlan | None = None,
          log_rows: list | None = None):
    """GT-guided epochs, then closed-loop epochs starting from those weights.

    Each phase starts with fresh optimizer moments.
    """
    sp, gt_curve = train_gt_guided(sp, data, cfg, plan, OptimState(), log_rows)
    sp, cl_curve = train_closed_loop(sp, data, plan, cfg, OptimState(), log_rows)
    return sp, gt_curve, cl_curve


def load_dataset(directory) -> list[Trajectory]:
    from .core import read_trajectory

    paths = sorted(p for p in os.listdir(directory) if p.endswith(".traj"))
    if not paths:
        raise ValidationError(f"no .traj files in {directory}")
    return [read_trajectory(Path(directory) / p) for p in paths]
