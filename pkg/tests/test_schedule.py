import pytest
from hypothesis import given
from hypothesis import strategies as st

from lesa.core import ValidationError
from lesa.schedule import CostModel, StageConfig, StepPlan, build_plan, flop_account


@pytest.mark.parametrize("N,full,speedup", [(5, 13, 50 / 13), (7, 10, 5.0), (10, 8, 6.25)])
def test_operating_points(N, full, speedup):
    plan = build_plan(StageConfig(50, N))
    assert plan.full_count == full
    assert flop_account(plan).speedup == pytest.approx(speedup, abs=1e-12)


def test_n10_full_steps_enumerated():
    assert build_plan(StageConfig(50, 10)).full_steps() == [0, 10, 16, 20, 30, 40, 41, 49]


def test_all_full():
    plan = build_plan(StageConfig(50, 1))
    assert plan.predict_count == 0 and flop_account(plan).speedup == 1.0
    assert flop_account(StepPlan.all_full(50)).speedup == 1.0


def test_predictor_cost():
    rep = flop_account(build_plan(StageConfig(50, 10)), CostModel(1.0, 0.05))
    assert rep.total == pytest.approx(8 + 42 * 0.05)
    assert rep.speedup == pytest.approx(50 / (8 + 2.1))


cfgs = st.integers(4, 80).flatmap(lambda S: st.tuples(
    st.just(S), st.integers(1, S), st.integers(1, S - 3)).flatmap(lambda t: st.tuples(
        st.just(t[0]), st.just(t[1]), st.just(t[2]), st.integers(t[2] + 1, t[0] - 2))))


@given(cfgs)
def test_full_count_formula(cfg):
    S, N, b1, b2 = cfg
    plan = build_plan(StageConfig(S, N, (b1, b2)))
    multiples = set(range(0, S, N))
    assert plan.full_count == len(multiples) + len({b1, b2, S - 1} - multiples)
    # every predicted step has a full step before it
    assert all(any(f < s for f in plan.full_steps()) for s in plan.predict_steps())


def test_speedup_monotone_in_n():
    speeds = [flop_account(build_plan(StageConfig(50, N))).speedup for N in range(2, 13)]
    assert all(a <= b for a, b in zip(speeds, speeds[1:]))


def test_plan_string_and_with_full():
    plan = build_plan(StageConfig(10, 4, (3, 6)))
    assert str(plan) == "FPPFFPFPFF"
    assert plan.with_full([1]).full_count == plan.full_count + 1


@pytest.mark.parametrize("kw", [{"N": 0}, {"N": 51}, {"boundaries": (20, 10)}, {"boundaries": (0, 10)}])
def test_stage_config_validation(kw):
    with pytest.raises(ValidationError):
        StageConfig(**kw)


def test_cost_model_validation():
    with pytest.raises(ValidationError):
        CostModel(0.0, 0.0)
