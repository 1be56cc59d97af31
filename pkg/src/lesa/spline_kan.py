"""Scalar modulators: a spline KAN and the SiLU MLP used in ablations.

Both map the relative-offset vector ``dt`` to one scalar alpha and carry
hand-written backward passes.  Parameters are numpy arrays updated in place
by the optimizer; ``version`` is bumped on every update so that stale
forward caches are detected.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .backbone import CounterRng
from .core import LesaError, ValidationError

KIND_KAN = 0
KIND_MLP = 1


class StaleCacheError(LesaError):
    pass


@dataclass(frozen=True)
class SplineGrid:
    lo: float = -1.25
    hi: float = 1.25
    intervals: int = 8
    order: int = 3

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValidationError("spline range must satisfy lo < hi")
        if self.intervals < 1 or self.order < 0:
            raise ValidationError("spline grid needs >= 1 interval and order >= 0")

    @cached_property
    def knots(self) -> np.ndarray:
        inner = np.linspace(self.lo, self.hi, self.intervals + 1)
        out = np.concatenate([np.full(self.order, self.lo), inner, np.full(self.order, self.hi)])
        out.setflags(write=False)
        return out

    @property
    def num_basis(self) -> int:
        return self.intervals + self.order

    def clamp(self, z):
        return np.clip(z, self.lo, self.hi)


def bspline_basis(grid: SplineGrid, z) -> np.ndarray:
    """Clamped B-spline basis values at ``z`` (clamped into the grid range).

    Scalar input gives a vector of ``G + k`` values, array input a matrix.
    """
    zz = grid.clamp(np.asarray(z, dtype=np.float64))
    B = _kernels.basis(grid.knots, grid.order, zz.ravel())
    return B[0] if zz.ndim == 0 else B.reshape(zz.shape + (grid.num_basis,))


def bspline_basis_deriv(grid: SplineGrid, z) -> tuple[np.ndarray, np.ndarray]:
    zz = np.atleast_1d(grid.clamp(np.asarray(z, dtype=np.float64)))
    return _kernels.basis_and_deriv(grid.knots, grid.order, zz)


def silu(x):
    return x / (1.0 + np.exp(-x))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# --------------------------------------------------------------------- KAN

@dataclass(eq=False)
class KanScalar:
    """alpha(dt) = b + sum_m w_m * phi_m(a_m . dt), phi_m a cubic spline."""

    a: np.ndarray          # (M, L) projections
    w: np.ndarray          # (M,) outer weights
    c: np.ndarray          # (M, G+k) spline coefficients
    b: np.ndarray          # () bias
    grid: SplineGrid = field(default_factory=SplineGrid)
    version: int = 0

    kind = KIND_KAN

    def __post_init__(self):
        self.a = np.array(self.a, dtype=np.float64, ndmin=2)
        self.w = np.array(self.w, dtype=np.float64, ndmin=1)
        self.c = np.array(self.c, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64).reshape(())
        M = self.a.shape[0]
        if M < 1 or self.w.shape != (M,) or self.c.shape != (M, self.grid.num_basis):
            raise ValidationError(
                f"inconsistent KAN shapes a{self.a.shape} w{self.w.shape} c{self.c.shape}")
        if not all(np.all(np.isfinite(p)) for p in self.params().values()):
            raise ValidationError("KAN parameters must be finite")

    @property
    def L(self) -> int:
        return self.a.shape[1]

    @property
    def M(self) -> int:
        return self.a.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"a": self.a, "w": self.w, "c": self.c, "b": self.b}

    def dims(self) -> tuple[int, int, int]:
        return self.M, self.grid.intervals, self.grid.order

    def bump(self):
        self.version += 1

    def forward(self, dt):
        return kan_forward(self, dt)

    def backward(self, dt, cache, dalpha):
        return kan_backward(self, dt, cache, dalpha)


@dataclass
class KanCache:
    owner: KanScalar
    version: int
    dt: np.ndarray
    inside: np.ndarray     # (M,) bool, projection within the grid range
    B: np.ndarray          # (M, nb)
    dB: np.ndarray         # (M, nb)
    phi: np.ndarray        # (M,)


def _check_input(dt, L):
    dt = np.asarray(dt, dtype=np.float64)
    if dt.shape != (L,):
        raise ValidationError(f"offset vector has shape {dt.shape}, expected ({L},)")
    if not np.all(np.isfinite(dt)):
        raise ValidationError("offset vector contains non-finite values")
    return dt


def _check_cache(model, dt, cache):
    if cache.owner is not model or cache.version != model.version:
        raise StaleCacheError("cache was produced by a different or since-updated model")
    if dt is not None and not np.array_equal(np.asarray(dt, dtype=np.float64), cache.dt):
        raise StaleCacheError("cache was produced for a different input")


def kan_forward(kan: KanScalar, dt) -> tuple[float, KanCache]:
    dt = _check_input(dt, kan.L)
    z = kan.a @ dt
    g = kan.grid
    inside = (z >= g.lo) & (z <= g.hi)
    B, dB = _kernels.basis_and_deriv(g.knots, g.order, g.clamp(z))
    phi = np.einsum("mj,mj->m", B, kan.c)
    alpha = float(kan.b + kan.w @ phi)
    return alpha, KanCache(kan, kan.version, dt, inside, B, dB, phi)


def kan_backward(kan: KanScalar, dt, cache: KanCache, dalpha: float):
    """Gradients of ``dalpha * alpha`` w.r.t. parameters, and w.r.t. ``dt``.

    The clamp passes no gradient for projections outside the grid range.
    """
    _check_cache(kan, dt, cache)
    dalpha = float(dalpha)
    dphi = dalpha * kan.w
    dz = dphi * np.einsum("mj,mj->m", cache.dB, kan.c) * cache.inside
    grads = {
        "a": np.outer(dz, cache.dt),
        "w": dalpha * cache.phi,
        "c": dphi[:, None] * cache.B,
        "b": np.array(dalpha),
    }
    return grads, dz @ kan.a


def kan_init(L: int, M: int = 16, G: int = 8, seed: int = 0, order: int = 3) -> KanScalar:
    if min(L, M, G) < 1:
        raise ValidationError("kan_init needs L, M, G >= 1")
    grid = SplineGrid(intervals=G, order=order)
    g = CounterRng(seed).spawn(0x4B414E)
    a = g.normal(M * L).reshape(M, L) / np.sqrt(L)
    w = g.normal(M) / np.sqrt(M)
    c = 0.1 * g.normal(M * grid.num_basis).reshape(M, grid.num_basis)
    return KanScalar(a, w, c, np.zeros(()), grid)


# --------------------------------------------------------------------- MLP

@dataclass(eq=False)
class MlpScalar:
    """alpha(dt) = v . silu(U dt + c)."""

    U: np.ndarray          # (H, L)
    c: np.ndarray          # (H,)
    v: np.ndarray          # (H,)
    version: int = 0

    kind = KIND_MLP

    def __post_init__(self):
        self.U = np.array(self.U, dtype=np.float64, ndmin=2)
        self.c = np.array(self.c, dtype=np.float64, ndmin=1)
        self.v = np.array(self.v, dtype=np.float64, ndmin=1)
        H = self.U.shape[0]
        if self.c.shape != (H,) or self.v.shape != (H,):
            raise ValidationError(f"inconsistent MLP shapes U{self.U.shape} c{self.c.shape} v{self.v.shape}")
        if not all(np.all(np.isfinite(p)) for p in self.params().values()):
            raise ValidationError("MLP parameters must be finite")

    @property
    def L(self) -> int:
        return self.U.shape[1]

    @property
    def H(self) -> int:
        return self.U.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"U": self.U, "c": self.c, "v": self.v}

    def dims(self) -> tuple[int, int, int]:
        return self.H, 0, 0

    def bump(self):
        self.version += 1

    def forward(self, dt):
        return mlp_forward(self, dt)

    def backward(self, dt, cache, dalpha):
        return mlp_backward(self, dt, cache, dalpha)


@dataclass
class MlpCache:
    owner: MlpScalar
    version: int
    dt: np.ndarray
    pre: np.ndarray
    act: np.ndarray


def mlp_forward(mlp: MlpScalar, dt) -> tuple[float, MlpCache]:
    dt = _check_input(dt, mlp.L)
    pre = mlp.U @ dt + mlp.c
    act = silu(pre)
    return float(mlp.v @ act), MlpCache(mlp, mlp.version, dt, pre, act)


def mlp_backward(mlp: MlpScalar, dt, cache: MlpCache, dalpha: float):
    _check_cache(mlp, dt, cache)
    dalpha = float(dalpha)
    dact = dalpha * mlp.v
    dpre = dact * (cache.act + _sigmoid(cache.pre) * (1.0 - cache.act))
    grads = {"U": np.outer(dpre, cache.dt), "c": dpre, "v": dalpha * cache.act}
    return grads, dpre @ mlp.U


def mlp_init(L: int, H: int = 256, seed: int = 0) -> MlpScalar:
    if min(L, H) < 1:
        raise ValidationError("mlp_init needs L, H >= 1")
    g = CounterRng(seed).spawn(0x4D4C50)
    U = g.normal(H * L).reshape(H, L) / np.sqrt(L)
    v = g.normal(H) / np.sqrt(H)
    return MlpScalar(U, np.zeros(H), v)
