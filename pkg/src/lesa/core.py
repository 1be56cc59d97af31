"""Shared domain types and the binary trajectory store.

Features live in memory as float64 arrays; files store float32.  A
trajectory therefore round-trips bit-exactly once it has been brought to
storage precision (see :meth:`Trajectory.quantized`).
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TRAJ_MAGIC = b"LESA"
TRAJ_VERSION = 1
_TRAJ_HEADER = struct.Struct("<4sIIIIQ")


class LesaError(Exception):
    """Base class for all package errors."""


class ValidationError(LesaError, ValueError):
    pass


class FormatError(LesaError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class LengthError(FormatError):
    pass


class IntegrationError(LesaError, RuntimeError):
    pass


def as_feature(values, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"feature must be a non-empty vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise ValidationError(f"feature has dim {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("feature contains non-finite values")
    return arr


@dataclass(frozen=True)
class Schedule:
    """Uniform timesteps t_s = 1 - s/(S-1), descending from 1 to 0."""

    num_steps: int

    def __post_init__(self):
        if self.num_steps < 2:
            raise ValidationError(f"schedule needs at least 2 steps, got {self.num_steps}")

    @property
    def timesteps(self) -> np.ndarray:
        s = np.arange(self.num_steps, dtype=np.float64)
        return 1.0 - s / (self.num_steps - 1)

    def t(self, step: int) -> float:
        return 1.0 - step / (self.num_steps - 1)

    def __len__(self):
        return self.num_steps


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One seeded run: descending timesteps, per-step features and states.

    Arrays are copied, cast to float64 and made read-only on construction.
    ``backbone_tag`` is informational and is not stored in trajectory files,
    so it takes no part in equality.
    """

    timesteps: np.ndarray
    features: np.ndarray
    states: np.ndarray
    seed: int = 0
    backbone_tag: str = field(default="", compare=False)

    def __post_init__(self):
        for name in ("timesteps", "features", "states"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if name != "timesteps" and arr.ndim == 1:
                arr = arr[:, None]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "seed", int(self.seed))
        self.validate()

    def validate(self):
        ts, fs, xs = self.timesteps, self.features, self.states
        if ts.ndim != 1 or ts.size < 2:
            raise ValidationError("trajectory needs at least 2 timesteps")
        S = ts.size
        if fs.ndim != 2 or fs.shape[0] != S or fs.shape[1] < 1:
            raise ValidationError(f"features shape {fs.shape} inconsistent with S={S}")
        if xs.ndim != 2 or xs.shape[0] != S or xs.shape[1] < 1:
            raise ValidationError(f"states shape {xs.shape} inconsistent with S={S}")
        if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(fs)) and np.all(np.isfinite(xs))):
            raise ValidationError("trajectory contains non-finite values")
        if np.any(np.diff(ts) >= 0):
            raise ValidationError("timesteps must be strictly decreasing")
        if abs(ts[0] - 1.0) > 1e-12 or abs(ts[-1]) > 1e-12:
            raise ValidationError("timesteps must run from 1.0 down to 0.0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed {self.seed} does not fit in u64")

    @property
    def num_steps(self) -> int:
        return self.timesteps.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def quantized(self) -> "Trajectory":
        """The trajectory as it will read back from a file (float32 payload)."""
        q = lambda a: a.astype("<f4").astype(np.float64)  # noqa: E731
        return Trajectory(q(self.timesteps), q(self.features), q(self.states),
                          self.seed, self.backbone_tag)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.seed == other.seed
            and _bit_equal(self.timesteps, other.timesteps)
            and _bit_equal(self.features, other.features)
            and _bit_equal(self.states, other.states)
        )

    __hash__ = None


def _bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def trajectory_bytes(traj: Trajectory) -> bytes:
    traj.validate()
    S, D, Ds = traj.num_steps, traj.dim, traj.state_dim
    head = _TRAJ_HEADER.pack(TRAJ_MAGIC, TRAJ_VERSION, S, D, Ds, traj.seed)
    q = traj.quantized()
    if not (np.all(np.isfinite(q.features)) and np.all(np.isfinite(q.states))):
        raise ValidationError("trajectory values overflow float32 storage")
    return b"".join([
        head,
        traj.timesteps.astype("<f4").tobytes(),
        traj.features.astype("<f4").tobytes(),
        traj.states.astype("<f4").tobytes(),
    ])


def write_trajectory(traj: Trajectory, path) -> None:
    payload = trajectory_bytes(traj)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise LesaError(f"cannot write trajectory to {os.fspath(path)}: {exc}") from exc


def parse_trajectory(data: bytes) -> Trajectory:
    if len(data) < _TRAJ_HEADER.size:
        raise LengthError(f"file has {len(data)} bytes, header needs {_TRAJ_HEADER.size}")
    magic, version, S, D, Ds, seed = _TRAJ_HEADER.unpack_from(data)
    if magic != TRAJ_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TRAJ_MAGIC!r}")
    if version != TRAJ_VERSION:
        raise UnsupportedVersionError(f"unsupported trajectory version {version}")
    expected = _TRAJ_HEADER.size + 4 * (S + S * D + S * Ds)
    if len(data) != expected:
        raise LengthError(f"payload is {len(data)} bytes, header declares {expected}")
    off = _TRAJ_HEADER.size
    ts = np.frombuffer(data, "<f4", S, off)
    off += 4 * S
    fs = np.frombuffer(data, "<f4", S * D, off).reshape(S, D)
    off += 4 * S * D
    xs = np.frombuffer(data, "<f4", S * Ds, off).reshape(S, Ds)
    return Trajectory(ts, fs, xs, seed)


def read_trajectory(path) -> Trajectory:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise LesaError(f"cannot read trajectory {os.fspath(path)}: {exc}") from exc
    return parse_trajectory(data)


def window(history: Sequence[np.ndarray], K: int) -> list[np.ndarray]:
    """Last ``K`` entries of ``history`` (oldest first).

    Short histories are left-padded by repeating the oldest entry.
    """
    if len(history) == 0:
        raise ValidationError("window of an empty history")
    if K < 1:
        raise ValidationError(f"window length must be >= 1, got {K}")
    tail = list(history[-K:])
    if len(tail) < K:
        tail = [tail[0]] * (K - len(tail)) + tail
    return tail
