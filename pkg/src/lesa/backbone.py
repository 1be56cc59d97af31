"""Oracle denoising processes.

Two backbones stand in for a diffusion transformer:

* ``GmmBackbone``: exact rectified-flow velocity of a Gaussian mixture,
  integrated with explicit Euler from t=1 (noise) to t=0 (data).
* ``SynthBackbone``: an exogenous feature stream with three regimes
  (fast-decorrelating, smooth drift, oscillating refinement).

Every backbone exposes the same stepping protocol so the accelerated
runner can substitute forecast features for model calls::

    x = bb.initial_state(seed)
    f = bb.feature(step, t, x, seed)    # the "model call"
    x = bb.advance(step, x, f, t, t_next)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import IntegrationError, Schedule, Trajectory, ValidationError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
DIVERGENCE_LIMIT = 1e6


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class CounterRng:
    """Counter-based splitmix64 stream with Box-Muller normals.

    Output ``i`` is ``mix(seed + (i+1)*golden)``; the state is just a
    counter, so streams are reproducible on any platform with IEEE doubles.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
            return _mix64(z)

    def uniform(self, n: int) -> np.ndarray:
        """Uniform doubles in (0, 1]."""
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def spawn(self, stream: int) -> "CounterRng":
        sub = _mix64(np.array([(self.seed ^ (int(stream) * 0xD1B54A32D192ED03)) & _MASK],
                              dtype=np.uint64))
        return CounterRng(int(sub[0]))


def sample_init(seed: int, dim: int) -> np.ndarray:
    """Initial noise x(t=1) for one run."""
    return CounterRng(seed).normal(dim)


# ---------------------------------------------------------------- GMM oracle

@dataclass(frozen=True)
class GmmSpec:
    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=1)
        mu = np.array(self.means, dtype=np.float64, ndmin=2)
        sg = np.array(self.sigmas, dtype=np.float64, ndmin=1)
        if not (w.size == mu.shape[0] == sg.size) or w.size == 0:
            raise ValidationError("GMM weights, means and sigmas must have one entry per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("GMM weights must be positive and sum to 1")
        if np.any(sg <= 0):
            raise ValidationError("GMM stddevs must be positive")
        for name, arr in (("weights", w), ("means", mu), ("sigmas", sg)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def default(cls, dim: int = 8, components: int = 4, radius: float = 4.0,
                sigma: float = 0.5, seed: int = 0) -> "GmmSpec":
        """Equal-weight mixture with means on a seeded sphere."""
        g = CounterRng(seed).spawn(0x6D6D)
        dirs = g.normal(components * dim).reshape(components, dim)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return cls(np.full(components, 1.0 / components), radius * dirs,
                   np.full(components, float(sigma)))


def gmm_velocity(spec: GmmSpec, x, t: float) -> np.ndarray:
    """Exact E[eps - x0 | x_t = x] for x_t = (1-t) x0 + t eps."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dim,):
        raise ValidationError(f"state has shape {x.shape}, expected ({spec.dim},)")
    if not np.all(np.isfinite(x)):
        raise ValidationError("gmm_velocity: non-finite state")
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"t={t} outside [0, 1]")
    mu, sg2 = spec.means, spec.sigmas**2
    s2 = (1.0 - t) ** 2 * sg2 + t * t                      # (K,)
    diff = x[None, :] - (1.0 - t) * mu                      # (K, D)
    logr = (np.log(spec.weights) - 0.5 * spec.dim * np.log(s2)
            - 0.5 * np.einsum("kd,kd->k", diff, diff) / s2)
    logr -= logr.max()
    r = np.exp(logr)
    r /= r.sum()
    gain = (t - (1.0 - t) * sg2) / s2
    vk = gain[:, None] * diff - mu
    return r @ vk


# ------------------------------------------------------- synthetic regimes

@dataclass(frozen=True)
class SynthParams:
    dim: int = 16
    steps: int = 50
    b1: int = 16
    b2: int = 41
    rho: tuple = (0.70, 0.995, 0.90)
    c: float = 4.0
    eps: float = 1.0
    omega: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if len(self.rho) != 3:
            raise ValidationError("synth needs three AR coefficients")
        if not 0 < self.b1 < self.b2 < self.steps:
            raise ValidationError(f"need 0 < b1 < b2 < S, got ({self.b1}, {self.b2}, {self.steps})")
        if any(not 0.0 <= r <= 1.0 for r in self.rho):
            raise ValidationError("AR coefficients must lie in [0, 1]")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")

    def stage(self, step: int) -> int:
        return 1 if step < self.b1 else (2 if step < self.b2 else 3)


def synth_features(p: SynthParams) -> np.ndarray:
    g = CounterRng(p.seed)
    D, S = p.dim, p.steps
    f0 = g.normal(D)
    f0 /= np.linalg.norm(f0)
    u = g.normal(D)
    u /= np.linalg.norm(u)
    w = g.normal(D)
    w /= np.linalg.norm(w)
    noise = g.normal((S - 1) * D).reshape(S - 1, D)
    out = np.empty((S, D))
    out[0] = f0
    for s in range(1, S):
        j = p.stage(s)
        rho = p.rho[j - 1]
        if j == 1:
            drift = 0.0
        elif j == 2:
            drift = p.c * (s - p.b1 + 1) / S * u
        else:
            drift = p.eps * math.sin(p.omega * s) * w
        out[s] = rho * out[s - 1] + drift + math.sqrt(1.0 - rho * rho) * noise[s - 1]
    return out


def synth_trajectory(p: SynthParams) -> Trajectory:
    feats = synth_features(p)
    return Trajectory(Schedule(p.steps).timesteps, feats, feats, p.seed, "synth")


# ---------------------------------------------------------- stepping API

class Backbone:
    """Stepping protocol shared by all oracle backbones."""

    tag = "base"
    dim: int
    state_dim: int

    def initial_state(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def feature(self, step: int, t: float, x: np.ndarray, seed: int = 0) -> np.ndarray:
        raise NotImplementedError

    def advance(self, step: int, x: np.ndarray, f: np.ndarray, t: float, t_next: float) -> np.ndarray:
        raise NotImplementedError


def _check_divergence(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise IntegrationError(f"state diverged at step {step}")


class EulerBackbone(Backbone):
    """State advanced by x <- x + (t_next - t) * feature."""

    def advance(self, step, x, f, t, t_next):
        x_next = x + (t_next - t) * f
        _check_divergence(x_next, step + 1)
        return x_next


@dataclass
class GmmBackbone(EulerBackbone):
    spec: GmmSpec
    tag: str = "gmm"

    @property
    def dim(self):
        return self.spec.dim

    state_dim = dim

    def initial_state(self, seed):
        return sample_init(seed, self.spec.dim)

    def feature(self, step, t, x, seed=0):
        return gmm_velocity(self.spec, x, t)


@dataclass
class LinearStreamBackbone(EulerBackbone):
    """Feature ``offset + slope * step`` regardless of state (test rig)."""

    offset: np.ndarray
    slope: np.ndarray
    tag: str = "linear"

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64)
        self.slope = np.asarray(self.slope, dtype=np.float64)

    @property
    def dim(self):
        return self.offset.size

    state_dim = dim

    def initial_state(self, seed):
        return sample_init(seed, self.dim)

    def feature(self, step, t, x, seed=0):
        return self.offset + self.slope * step


@dataclass
class SynthBackbone(Backbone):
    """Exogenous stream; the state mirrors whichever feature was emitted."""

    params: SynthParams
    tag: str = "synth"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return self.params.dim

    state_dim = dim

    def stream(self, seed: int) -> np.ndarray:
        if seed not in self._cache:
            p = SynthParams(**{**self.params.__dict__, "seed": seed})
            self._cache[seed] = synth_features(p)
        return self._cache[seed]

    def initial_state(self, seed):
        return self.stream(seed)[0].copy()

    def feature(self, step, t, x, seed=0):
        return self.stream(seed)[step].copy()

    def advance(self, step, x, f, t, t_next):
        # the recorded state at step s+1 is overwritten once its feature is known
        return f

    mirrors_features = True


def integrate_full(backbone_or_spec, schedule: Schedule, x_init=None, seed: int = 0) -> Trajectory:
    """Full-compute reference run: one model call per step."""
    bb = GmmBackbone(backbone_or_spec) if isinstance(backbone_or_spec, GmmSpec) else backbone_or_spec
    x = bb.initial_state(seed) if x_init is None else np.array(x_init, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("x_init must be finite")
    ts = schedule.timesteps
    S = schedule.num_steps
    feats = np.empty((S, bb.dim))
    states = np.empty((S, bb.state_dim))
    for s in range(S):
        f = bb.feature(s, ts[s], x, seed)
        feats[s] = f
        states[s] = f if getattr(bb, "mirrors_features", False) else x
        if s + 1 < S:
            x = bb.advance(s, x, f, ts[s], ts[s + 1])
    return Trajectory(ts, feats, states, seed, bb.tag)


# ------------------------------------------------------------ text config

@dataclass(frozen=True)
class BackboneConfig:
    """Backbone selection parsed from ``key=value`` lines."""

    backbone: str = "gmm"
    dim: int = 8
    steps: int = 50
    seed: int = 0
    gmm_components: int = 4
    gmm_radius: float = 4.0
    gmm_sigma: float = 0.5
    synth_b1: int = 16
    synth_b2: int = 41
    synth_rho1: float = 0.70
    synth_rho2: float = 0.995
    synth_rho3: float = 0.90
    synth_c: float = 4.0
    synth_eps: float = 1.0
    synth_omega: float = 0.9

    def __post_init__(self):
        if self.backbone not in ("gmm", "synth"):
            raise ValidationError(f"unknown backbone {self.backbone!r} (expected gmm or synth)")
        if self.dim < 1 or self.steps < 2:
            raise ValidationError("dim must be >= 1 and steps >= 2")

    @classmethod
    def from_text(cls, text: str, **overrides) -> "BackboneConfig":
        fields = cls.__dataclass_fields__
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            name = key.replace(".", "_")
            if name not in fields:
                raise ValidationError(f"config line {lineno}: unknown key {key!r}")
            values[name] = val
        values.update({k: v for k, v in overrides.items() if v is not None})
        typed = {}
        for name, val in values.items():
            kind = type(fields[name].default)
            try:
                typed[name] = kind(val) if kind is not int else int(str(val), 0)
            except ValueError as exc:
                raise ValidationError(f"config key {name!r}: cannot parse {val!r} as {kind.__name__}") from exc
        return cls(**typed)

    @classmethod
    def load(cls, path, **overrides) -> "BackboneConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), **overrides)

    def to_text(self) -> str:
        lines = []
        for name in self.__dataclass_fields__:
            key = name.replace("_", ".", 1) if name.startswith(("gmm_", "synth_")) else name
            lines.append(f"{key}={getattr(self, name)}")
        return "\n".join(lines) + "\n"

    def synth_params(self, seed: int | None = None) -> SynthParams:
        return SynthParams(self.dim, self.steps, self.synth_b1, self.synth_b2,
                           (self.synth_rho1, self.synth_rho2, self.synth_rho3),
                           self.synth_c, self.synth_eps, self.synth_omega,
                           self.seed if seed is None else seed)

    def build(self) -> Backbone:
        if self.backbone == "gmm":
            return GmmBackbone(GmmSpec.default(self.dim, self.gmm_components, self.gmm_radius,
                                               self.gmm_sigma, self.seed))
        return SynthBackbone(self.synth_params())

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.steps)
