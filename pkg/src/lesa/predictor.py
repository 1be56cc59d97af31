"""Stage-aware residual predictor.

Each expert forecasts the next feature as ``h_t + alpha * (W [window] + b)``
where the window is the last K features (oldest first, ending at h_t) and
alpha is a scalar produced by a modulator from the offsets between the
prediction timestep and every timestep of the schedule.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .core import FormatError, LengthError, LesaError, Schedule, UnsupportedVersionError, ValidationError, window
from .spline_kan import (KIND_KAN, KIND_MLP, KanScalar, MlpScalar, SplineGrid, StaleCacheError,
                         kan_init, mlp_init)

MODEL_MAGIC = b"LESM"
MODEL_VERSION = 1
DEFAULT_BOUNDARIES = (16, 41)
DEFAULT_WINDOWS = (4, 8, 8)


def offsets(schedule: Schedule, pred_step: int) -> np.ndarray:
    """t(pred_step) - t(i) for i = S-1 down to 0."""
    S = schedule.num_steps
    if not 0 <= pred_step < S:
        raise ValidationError(f"pred_step {pred_step} outside [0, {S})")
    ts = schedule.timesteps
    return ts[pred_step] - ts[::-1]


@dataclass(eq=False)
class LesaExpert:
    K: int
    W: np.ndarray                  # (D, K*D)
    b: np.ndarray                  # (D,)
    modulator: KanScalar | MlpScalar
    stage_id: int = 1
    version: int = 0

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64, ndmin=1)
        D = self.b.size
        if self.K < 1 or self.W.shape != (D, self.K * D):
            raise ValidationError(f"expert W has shape {self.W.shape}, expected ({D}, {self.K * D})")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValidationError("expert parameters must be finite")

    @property
    def D(self) -> int:
        return self.b.size

    def params(self) -> dict[str, np.ndarray]:
        out = {"W": self.W, "b": self.b}
        out.update({f"mod.{k}": v for k, v in self.modulator.params().items()})
        return out

    def bump(self):
        self.version += 1
        self.modulator.bump()


@dataclass
class PredictCache:
    owner: LesaExpert
    version: int
    concat: np.ndarray
    z: np.ndarray
    alpha: float
    mod_cache: object


def predict(expert: LesaExpert, history, schedule: Schedule, pred_step: int):
    """Forecast the feature at ``pred_step`` from ``history`` (oldest first)."""
    if len(history) == 0:
        raise ValidationError("predict needs a non-empty history")
    w = window(history, expert.K)
    concat = np.concatenate([np.asarray(h, dtype=np.float64) for h in w])
    if concat.size != expert.K * expert.D:
        raise ValidationError(f"history features have dim {concat.size // expert.K}, expert expects {expert.D}")
    if expert.modulator.L != schedule.num_steps:
        raise ValidationError(f"modulator expects {expert.modulator.L} offsets, schedule has {schedule.num_steps} steps")
    z = expert.W @ concat + expert.b
    alpha, mod_cache = expert.modulator.forward(offsets(schedule, pred_step))
    h_t = concat[-expert.D:]
    h_hat = h_t + alpha * z
    return h_hat, PredictCache(expert, expert.version, concat, z, alpha, mod_cache)


def predict_backward(expert: LesaExpert, cache: PredictCache, grad_h_hat) -> dict[str, np.ndarray]:
    """Parameter gradients; the history is treated as a constant."""
    if cache.owner is not expert or cache.version != expert.version:
        raise StaleCacheError("predict cache belongs to a different or since-updated expert")
    g = np.asarray(grad_h_hat, dtype=np.float64)
    if g.shape != (expert.D,):
        raise ValidationError(f"gradient has shape {g.shape}, expected ({expert.D},)")
    ga = cache.alpha * g
    dalpha = float(g @ cache.z)
    mod_grads, _ = expert.modulator.backward(None, cache.mod_cache, dalpha)
    grads = {"W": np.outer(ga, cache.concat), "b": ga}
    grads.update({f"mod.{k}": v for k, v in mod_grads.items()})
    return grads


@dataclass(eq=False)
class StagePredictor:
    """Router over per-stage experts.

    ``boundaries`` is ``(b1, b2)`` for the three-expert model, or ``None``
    for a single expert covering every step.
    """

    num_steps: int
    boundaries: tuple[int, int] | None
    experts: list

    def __post_init__(self):
        S = self.num_steps
        if self.boundaries is None:
            if len(self.experts) != 1:
                raise ValidationError("unsegmented predictor needs exactly one expert")
        else:
            b1, b2 = self.boundaries = tuple(int(b) for b in self.boundaries)
            if not 0 < b1 < b2 < S:
                raise ValidationError(f"need 0 < b1 < b2 < S, got ({b1}, {b2}, {S})")
            if len(self.experts) != 3:
                raise ValidationError("segmented predictor needs exactly three experts")
        dims = {e.D for e in self.experts}
        if len(dims) != 1:
            raise ValidationError("experts disagree on feature dimension")
        for e in self.experts:
            if e.modulator.L != S:
                raise ValidationError(f"expert modulator expects L={e.modulator.L}, schedule has S={S}")

    @property
    def dim(self) -> int:
        return self.experts[0].D

    @property
    def segmented(self) -> bool:
        return self.boundaries is not None

    def expert(self, step: int) -> LesaExpert:
        return self.experts[expert_for_step(self, step) - 1]

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.num_steps)


def expert_for_step(sp: StagePredictor, step: int) -> int:
    if not 0 <= step < sp.num_steps:
        raise ValidationError(f"step {step} outside [0, {sp.num_steps})")
    if sp.boundaries is None:
        return 1
    b1, b2 = sp.boundaries
    return 1 if step < b1 else (2 if step < b2 else 3)


def make_predictor(num_steps: int, dim: int, boundaries=DEFAULT_BOUNDARIES, windows=DEFAULT_WINDOWS,
                   modulator: str = "kan", m_components: int = 16, grid: int = 8,
                   hidden: int = 256, seed: int = 0, alpha_bias: float = 1.0) -> StagePredictor:
    """Fresh predictor with zero residual projections.

    The KAN bias starts at ``alpha_bias`` so that alpha begins away from the
    alpha = 0 saddle of the product ``alpha * z``.  With ``boundaries=None`` a
    single expert with window ``windows[-1]`` is built.
    """
    if modulator not in ("kan", "mlp"):
        raise ValidationError(f"unknown modulator {modulator!r}")
    ks = list(windows) if boundaries is not None else [windows[-1]]
    experts = []
    for i, K in enumerate(ks):
        sub = seed * 7 + i
        if modulator == "kan":
            mod = kan_init(num_steps, m_components, grid, sub)
            mod.b[...] = alpha_bias
        else:
            mod = mlp_init(num_steps, hidden, sub)
        experts.append(LesaExpert(int(K), np.zeros((dim, K * dim)), np.zeros(dim), mod, i + 1))
    return StagePredictor(num_steps, boundaries, experts)


# -------------------------------------------------------------- model file

_MODEL_HEADER = struct.Struct("<4sIIIII")
_EXPERT_HEADER = struct.Struct("<IBIII")


def model_bytes(sp: StagePredictor) -> bytes:
    b1, b2 = sp.boundaries if sp.boundaries is not None else (0, 0)
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, sp.num_steps, sp.dim, b1, b2)]
    for e in sp.experts:
        mod = e.modulator
        parts.append(_EXPERT_HEADER.pack(e.K, mod.kind, *mod.dims()))
        arrays = [e.W, e.b] + list(mod.params().values())
        parts.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return b"".join(parts)


def parse_model(data: bytes) -> StagePredictor:
    if len(data) < _MODEL_HEADER.size:
        raise LengthError("model file shorter than its header")
    magic, version, S, D, b1, b2 = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"unsupported model version {version}")
    off = _MODEL_HEADER.size
    boundaries = None if (b1, b2) == (0, 0) else (b1, b2)
    n_experts = 1 if boundaries is None else 3

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        if off + 8 * n > len(data):
            raise LengthError("model payload truncated")
        arr = np.frombuffer(data, "<f8", n, off).reshape(shape).astype(np.float64)
        off += 8 * n
        return arr

    experts = []
    for i in range(n_experts):
        if off + _EXPERT_HEADER.size > len(data):
            raise LengthError("model payload truncated")
        K, kind, d0, d1, d2 = _EXPERT_HEADER.unpack_from(data, off)
        off += _EXPERT_HEADER.size
        W, b = take((D, K * D)), take((D,))
        if kind == KIND_KAN:
            grid = SplineGrid(intervals=d1, order=d2)
            M, nb = d0, grid.num_basis
            mod = KanScalar(take((M, S)), take((M,)), take((M, nb)), take(()), grid)
        elif kind == KIND_MLP:
            H = d0
            mod = MlpScalar(take((H, S)), take((H,)), take((H,)))
        else:
            raise FormatError(f"unknown modulator kind {kind}")
        experts.append(LesaExpert(K, W, b, mod, i + 1))
    if off != len(data):
        raise LengthError(f"model file has {len(data) - off} trailing bytes")
    return StagePredictor(S, boundaries, experts)


def save_model(sp: StagePredictor, path) -> None:
    payload = model_bytes(sp)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise LesaError(f"cannot write model to {os.fspath(path)}: {exc}") from exc


def load_model(path) -> StagePredictor:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise LesaError(f"cannot read model {os.fspath(path)}: {exc}") from exc
    return parse_model(data)
