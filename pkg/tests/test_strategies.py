import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskbert.errors import ContractError, ParameterError, ScheduleError
from deskbert.model import ModelConfig, group_names, group_of, init_params
from deskbert.strategies import (
    STRATEGIES,
    AdamState,
    TrainingPlan,
    adam_step,
    freeze_mask_last_k,
    frozen_set,
    group_learning_rates,
    layer_lr,
    preset,
    stlr_lr,
    unfreeze_order,
)


def stl(**kw):
    return preset("STL", **{"peak_lr": 2e-5, "total_steps": 100, **kw})


@pytest.mark.parametrize("t, expected", [(20, 2e-5), (60, 1e-5), (0, 0.0), (100, 0.0), (10, 1e-5)])
def test_stlr_examples(t, expected):
    assert stlr_lr(stl(), t) == pytest.approx(expected, rel=1e-12, abs=0)


def test_stlr_off_is_constant():
    plan = preset("NA", peak_lr=3e-4, total_steps=50)
    assert {stlr_lr(plan, t) for t in range(51)} == {3e-4}


def test_stlr_errors():
    with pytest.raises(ScheduleError):
        stlr_lr(stl(), 101)
    with pytest.raises(ScheduleError):
        stlr_lr(stl(), -1)
    with pytest.raises(ScheduleError):
        stlr_lr(preset("STL"), 0)


@settings(max_examples=100, deadline=None)
@given(T=st.integers(5, 5000), pw=st.floats(0.05, 0.95), peak=st.floats(1e-6, 1e-1))
def test_stlr_single_peak_and_bounded(T, pw, peak):
    plan = preset("STL", peak_lr=peak, warmup_proportion=pw, total_steps=T)
    lrs = np.array([stlr_lr(plan, t) for t in range(T + 1)])
    assert lrs[0] == 0 and lrs[-1] == 0
    assert np.all(lrs >= 0) and np.all(lrs <= peak * (1 + 1e-12))
    peak_step = int(np.argmax(lrs))
    assert abs(peak_step - pw * T) <= 1
    assert np.all(np.diff(lrs[: peak_step + 1]) >= 0)
    assert np.all(np.diff(lrs[peak_step:]) <= 0)


def test_layer_lr_example_and_ratio():
    plan = preset("STL+DFT")
    L = 4
    assert layer_lr(plan, "head", 1.0, L) == 1.0
    assert layer_lr(plan, "encoder.4", 1.0, L) == 0.85
    assert layer_lr(plan, "embeddings", 1.0, L) == pytest.approx(0.85 ** 5, rel=1e-15)
    rates = group_learning_rates(plan, 2e-5, L)
    order = group_names(L)
    for lower, upper in zip(order[:-1], order[1:]):
        assert rates[lower] == rates[upper] * 0.85
        assert layer_lr(plan, lower, 2e-5, L) == rates[lower]
    with pytest.raises(ParameterError):
        layer_lr(plan, "encoder.5", 1.0, L)


def test_unfreeze_order():
    assert unfreeze_order(3) == ["encoder.3", "encoder.2", "encoder.1", "embeddings"]


def test_frozen_set_examples():
    plan = preset("STL+GU", total_steps=60)
    spe = 9  # one group every 3 steps
    assert frozen_set(plan, 0, spe, 2) == {"encoder.2", "encoder.1", "embeddings"}
    assert frozen_set(plan, 2, spe, 2) == {"encoder.2", "encoder.1", "embeddings"}
    assert frozen_set(plan, 3, spe, 2) == {"encoder.1", "embeddings"}
    assert frozen_set(plan, 6, spe, 2) == {"embeddings"}
    assert frozen_set(plan, 9, spe, 2) == set()
    assert frozen_set(plan, 50, spe, 2) == set()
    assert frozen_set(preset("STL"), 0, spe, 2) == set()


def test_frozen_set_uneven_thirds():
    plan = preset("STL+GU", total_steps=60)
    # 10 steps per epoch: releases at 10/3, 20/3, 10, so at steps 4, 7 and 10
    released = [len(unfreeze_order(2)) - len(frozen_set(plan, t, 10, 2)) for t in range(12)]
    assert released == [0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3]


@settings(max_examples=60, deadline=None)
@given(spe=st.integers(1, 40), L=st.integers(1, 6))
def test_frozen_set_monotone(spe, L):
    plan = preset("ALL", total_steps=spe * 6)
    previous = None
    for t in range(spe * 6 + 1):
        current = frozen_set(plan, t, spe, L)
        assert "head" not in current
        if previous is not None:
            assert current <= previous
        previous = current
    assert previous == set()


def test_freeze_mask_last_k():
    assert freeze_mask_last_k(TrainingPlan(freeze_last_k=0), 4) == {"head"}
    assert freeze_mask_last_k(TrainingPlan(freeze_last_k=2), 4) == {"head", "encoder.3", "encoder.4"}
    assert freeze_mask_last_k(TrainingPlan(freeze_last_k=4), 4) == {"head"} | {f"encoder.{i}" for i in range(1, 5)}
    assert freeze_mask_last_k(TrainingPlan(), 4) == set(group_names(4))
    with pytest.raises(ParameterError):
        freeze_mask_last_k(TrainingPlan(freeze_last_k=5), 4)
    frozen = frozen_set(TrainingPlan(freeze_last_k=1), 0, 10, 3)
    assert frozen == {"embeddings", "encoder.1", "encoder.2"}


def test_plan_validation():
    with pytest.raises(ParameterError):
        TrainingPlan(gradual_unfreezing=True, freeze_last_k=1)
    with pytest.raises(ParameterError):
        TrainingPlan(discrimination_rate=0.0)
    with pytest.raises(ParameterError):
        TrainingPlan(warmup_proportion=1.0)
    with pytest.raises(ParameterError):
        TrainingPlan.from_dict({"peak_lr": 1e-3, "momentum": 0.9})


def test_presets():
    flags = {name: (p.use_stlr, p.discrimination_rate, p.gradual_unfreezing) for name in STRATEGIES for p in [preset(name)]}
    assert flags == {
        "NA": (False, 1.0, False),
        "STL": (True, 1.0, False),
        "STL+DFT": (True, 0.85, False),
        "STL+GU": (True, 1.0, True),
        "ALL": (True, 0.85, True),
    }
    assert preset("ALL", peak_lr=1e-3).peak_lr == 1e-3
    with pytest.raises(ParameterError):
        preset("ALL", discrimination_rate=0.5)
    with pytest.raises(ParameterError):
        preset("FAST")
    assert TrainingPlan.from_dict(preset("ALL", epochs=2).to_dict()) == preset("ALL", epochs=2)


TINY = ModelConfig(num_layers=2, hidden=8, num_heads=2, ff_dim=8, vocab_size=12, max_seq_len=6)


def test_adam_matches_hand_rolled_reference():
    params = init_params(TINY, 0)
    state = AdamState(params)
    rng = np.random.default_rng(0)
    ref = {n: t.data.astype(np.float64) for n, t in params.items()}
    m = {n: np.zeros_like(v) for n, v in ref.items()}
    v = {n: np.zeros_like(w) for n, w in ref.items()}
    rates = group_learning_rates(preset("STL+DFT"), 1e-2, TINY.num_layers)
    for step in range(1, 6):
        for name, t in params.items():
            t.grad = rng.standard_normal(t.shape).astype(np.float32)
            g = t.grad.astype(np.float64)
            m[name] = 0.9 * m[name] + 0.1 * g
            v[name] = 0.999 * v[name] + 0.001 * g * g
            m_hat, v_hat = m[name] / (1 - 0.9**step), v[name] / (1 - 0.999**step)
            ref[name] = ref[name] - rates[group_of(name)] * m_hat / (np.sqrt(v_hat) + 1e-8)
        adam_step(params, state, rates)
    for name, t in params.items():
        np.testing.assert_allclose(t.data, ref[name], rtol=1e-5, atol=1e-6)


def test_adam_bias_correction_counts_per_parameter():
    params = init_params(TINY, 0)
    state = AdamState(params)
    rates = {g: 1e-2 for g in group_names(TINY.num_layers)}
    before = params["embeddings.token"].data.copy()
    for _, t in params.items():
        t.grad = np.ones(t.shape, dtype=np.float32)
    adam_step(params, state, rates, frozen={"embeddings"})
    adam_step(params, state, rates, frozen={"embeddings"})
    assert np.array_equal(params["embeddings.token"].data, before)
    assert np.all(state.m["embeddings.token"] == 0) and np.all(state.v["embeddings.token"] == 0)
    adam_step(params, state, rates)
    assert state.counts["embeddings.token"] == 1 and state.counts["head.classifier.bias"] == 3
    # first corrected step of a constant gradient moves by exactly lr
    np.testing.assert_allclose(before - params["embeddings.token"].data, 1e-2, rtol=1e-4)


def test_adam_requires_gradients_on_trainable_parameters():
    params = init_params(TINY, 0)
    state = AdamState(params)
    with pytest.raises(ContractError):
        adam_step(params, state, {g: 1e-3 for g in group_names(2)})
