"""Step plans and FLOP accounting.

A plan marks every step as a full model call or a predicted step.  Full
calls happen on multiples of the interval N plus a forced set: step 0, both
stage boundaries and the final step.  On a 50-step schedule with boundaries
(16, 41) this gives 13, 10 and 8 full steps for N = 5, 7 and 10.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import ValidationError

FULL = "F"
PREDICT = "P"


@dataclass(frozen=True)
class StageConfig:
    steps: int = 50
    N: int = 10
    boundaries: tuple[int, int] = (16, 41)
    windows: tuple[int, int, int] = (4, 8, 8)

    def __post_init__(self):
        if not 1 <= self.N <= self.steps:
            raise ValidationError(f"interval N={self.N} must lie in [1, {self.steps}]")
        b1, b2 = self.boundaries
        if not 0 < b1 < b2 < self.steps:
            raise ValidationError(f"need 0 < b1 < b2 < S, got ({b1}, {b2}, {self.steps})")


@dataclass(frozen=True)
class StepPlan:
    """Per-step labels plus the interval and stage boundaries they came from."""

    labels: tuple[str, ...]
    interval: int = 1
    boundaries: tuple[int, ...] = ()

    @property
    def num_steps(self) -> int:
        return len(self.labels)

    @property
    def full_count(self) -> int:
        return sum(1 for lab in self.labels if lab == FULL)

    @property
    def predict_count(self) -> int:
        return self.num_steps - self.full_count

    def is_full(self, step: int) -> bool:
        return self.labels[step] == FULL

    def full_steps(self) -> list[int]:
        return [s for s, lab in enumerate(self.labels) if lab == FULL]

    def predict_steps(self) -> list[int]:
        return [s for s, lab in enumerate(self.labels) if lab == PREDICT]

    @classmethod
    def all_full(cls, steps: int) -> "StepPlan":
        return cls((FULL,) * steps, 1, ())

    def with_full(self, extra) -> "StepPlan":
        extra = set(extra)
        labels = tuple(FULL if s in extra else lab for s, lab in enumerate(self.labels))
        return StepPlan(labels, self.interval, self.boundaries)

    def __str__(self):
        return "".join(self.labels)


def build_plan(cfg: StageConfig) -> StepPlan:
    S, N = cfg.steps, cfg.N
    forced = {0, *cfg.boundaries, S - 1}
    labels = tuple(FULL if (s % N == 0 or s in forced) else PREDICT for s in range(S))
    return StepPlan(labels, N, tuple(cfg.boundaries))


@dataclass(frozen=True)
class CostModel:
    c_full: float = 1.0
    c_pred: float = 0.0

    def __post_init__(self):
        if self.c_full <= 0 or self.c_pred < 0:
            raise ValidationError("cost model needs c_full > 0 and c_pred >= 0")


@dataclass(frozen=True)
class FlopReport:
    total: float
    baseline: float
    speedup: float


def flop_account(plan: StepPlan, cm: CostModel = CostModel()) -> FlopReport:
    baseline = plan.num_steps * cm.c_full
    total = plan.full_count * cm.c_full + plan.predict_count * cm.c_pred
    if total <= 0:
        raise ValidationError("plan has zero total cost")
    return FlopReport(total, baseline, baseline / total)
