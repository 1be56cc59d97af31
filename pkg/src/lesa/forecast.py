"""Training-free baselines: cache-then-reuse and truncated-Taylor forecasting.

Finite-difference convention
----------------------------
Differences are taken along diffusion time, which runs opposite to the step
index: ``levels[1] = F(previous full) - F(current full)``.  With this sign
the ``(-k)**i`` factor of the Taylor sum moves the forecast forward in step
index, and linear streams are reproduced exactly.

The table also remembers the step index of each absorbed full step, so the
levels are kept as scaled divided differences
``levels[i] = i! * N**i * F[tau_0, ..., tau_i]``.  For full steps spaced
exactly N apart these are the plain differences; irregular gaps (forced full
steps at stage boundaries) are handled without special cases.

``taylor_forecast`` evaluates the order-m interpolating polynomial through
the newest m+1 full steps (Newton form), which is exact for streams that are
polynomial of degree <= m.  ``literal=True`` instead plugs the levels straight
into ``sum_i levels[i] / (i! N**i) * (-k)**i``; the two agree for m <= 1, but
the literal sum is only first-order accurate in its derivative estimates and
is not exact on quadratics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import ValidationError, as_feature


@dataclass(frozen=True)
class DiffTable:
    N: int
    m_max: int = 2
    levels: tuple = ()
    steps: tuple = field(default=())   # step index of each node, newest first

    def __post_init__(self):
        if self.N < 1:
            raise ValidationError("interval N must be >= 1")
        if not 0 <= self.m_max <= 4:
            raise ValidationError("m_max must lie in [0, 4]")

    @property
    def count(self) -> int:
        """Number of full steps absorbed (capped at m_max + 1 stored nodes)."""
        return len(self.steps)

    def order_for(self, m: int) -> int:
        return min(m, len(self.levels) - 1)


def table_update(table: DiffTable, f_new, step: int | None = None) -> DiffTable:
    """Absorb a full-compute feature; ``step`` defaults to N after the newest node."""
    if table.levels:
        f_new = as_feature(f_new, table.levels[0].size)
        if step is None:
            step = table.steps[0] + table.N
        if step <= table.steps[0]:
            raise ValidationError(f"full step {step} does not follow step {table.steps[0]}")
    else:
        f_new = as_feature(f_new)
        step = 0 if step is None else step
    steps = (int(step),) + table.steps[: table.m_max]
    new = [f_new.copy()]
    for i in range(1, min(len(table.levels), table.m_max) + 1):
        gap = steps[0] - steps[i]
        new.append(i * table.N * (table.levels[i - 1] - new[i - 1]) / gap)
    for lv in new:
        lv.setflags(write=False)
    return DiffTable(table.N, table.m_max, tuple(new), steps)


class Forecast(NamedTuple):
    value: np.ndarray
    order: int           # order actually used after any fallback


def taylor_forecast(table: DiffTable, k: int, m: int, literal: bool = False) -> Forecast:
    """Forecast the feature ``k`` steps after the newest full step.

    Falls back to the highest order the table supports.
    """
    if not table.levels:
        raise ValidationError("taylor_forecast on an empty table")
    if k < 1:
        raise ValidationError(f"forecast offset must be >= 1, got {k}")
    if m < 0:
        raise ValidationError(f"order must be >= 0, got {m}")
    order = table.order_for(m)
    out = table.levels[0].copy()
    N = table.N
    if literal:
        for i in range(1, order + 1):
            out = out + table.levels[i] / (math.factorial(i) * N**i) * (-k) ** i
        return Forecast(out, order)
    s0 = table.steps[0]
    prod = 1.0
    for i in range(1, order + 1):
        # tau_target - tau_{i-1} with tau = -step
        prod *= -(k + s0 - table.steps[i - 1])
        out = out + table.levels[i] / (math.factorial(i) * N**i) * prod
    return Forecast(out, order)


def reuse_forecast(table: DiffTable) -> np.ndarray:
    if not table.levels:
        raise ValidationError("reuse_forecast on an empty table")
    return table.levels[0].copy()
