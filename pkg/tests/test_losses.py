import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abstain_bench.errors import DegenerateSelectionError, InvalidHyperparameterError
from abstain_bench.gradsuite import LOSS_NAMES, gradient_suite
from abstain_bench.losses import (
    DGLoss,
    SATLoss,
    SatState,
    SELELoss,
    SelNetLoss,
    entropy_term,
    loss_dg,
    loss_mse,
    loss_sat,
    loss_sele,
    loss_selnet,
    loss_selnet_em,
    sat_update_targets,
    softmax_backward,
)
from abstain_bench.nn import softmax


def _row(*p):
    return np.array([p], dtype=np.float64)


# ---------------------------------------------------------------- DG


def test_dg_perfect_confidence_is_zero():
    assert loss_dg(_row(1.0, 0.0, 0.0), np.array([0]), 2.0)[0] == pytest.approx(0.0, abs=1e-15)


def test_dg_half_abstain():
    value, _ = loss_dg(_row(0.5, 0.0, 0.5), np.array([0]), 2.0)
    assert value == pytest.approx(-math.log(0.75), abs=1e-12)
    assert value == pytest.approx(0.28768, abs=1e-5)


def test_dg_large_reward_tends_to_cross_entropy():
    p = _row(0.6, 0.3, 0.1)
    value, _ = loss_dg(p, np.array([0]), 1e12)
    assert value == pytest.approx(-math.log(0.6), abs=1e-9)


@pytest.mark.parametrize("o", [1.0, 0.5, -2.0])
def test_dg_rejects_small_reward(o):
    with pytest.raises(InvalidHyperparameterError):
        DGLoss(o)


# ---------------------------------------------------------------- SAT


def test_sat_update_rule():
    state = SatState(np.array([[0.0, 1.0]]))
    out = sat_update_targets(state, _row(0.3, 0.7), 0.9, epoch=40, warmup=30, index=np.array([0]))
    assert np.allclose(out.targets, [[0.03, 0.97]], atol=1e-15)


def test_sat_targets_frozen_before_warmup():
    state = SatState.one_hot(np.array([1, 0]), 2)
    out = sat_update_targets(state, np.array([[0.3, 0.7], [0.1, 0.9]]), 0.9, epoch=5, warmup=30, index=np.arange(2))
    assert np.array_equal(out.targets, [[0.0, 1.0], [1.0, 0.0]])


@pytest.mark.parametrize("gamma", [1.0, 0.5])
def test_sat_gamma_range(gamma):
    with pytest.raises(InvalidHyperparameterError):
        SATLoss(gamma, 0, np.array([0, 1]), 2)


def test_sat_loss_examples():
    assert loss_sat(_row(1.0, 0.0, 0.0), _row(1.0, 0.0), np.array([0]))[0] == pytest.approx(0.0, abs=1e-15)
    assert loss_sat(_row(0.2, 0.7, 0.1), _row(0.0, 1.0), np.array([1]))[0] == pytest.approx(-math.log(0.7), abs=1e-12)
    # t_y = 0.5 and s_abstain = 0.5: subtract the class part to isolate the abstention term
    full, _ = loss_sat(_row(0.25, 0.25, 0.5), _row(0.5, 0.5), np.array([1]))
    class_part = -2 * 0.5 * math.log(0.25)
    assert full - class_part == pytest.approx(-0.5 * math.log(0.5), abs=1e-12)
    assert -0.5 * math.log(0.5) == pytest.approx(0.34657, abs=1e-5)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.floats(0.9, 0.99), st.integers(0, 10_000))
def test_sat_targets_stay_distributions(n, m, gamma, seed):
    rng = np.random.default_rng(seed)
    state = SatState.one_hot(rng.integers(0, m, size=n), m)
    for epoch in range(3):
        probs = softmax(rng.normal(size=(n, m)) * 3)
        state = sat_update_targets(state, probs, gamma, epoch=epoch, warmup=0, index=np.arange(n))
    assert np.all((state.targets >= 0) & (state.targets <= 1))
    assert np.allclose(state.targets.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------- entropy


def test_entropy_examples():
    assert entropy_term(np.full((1, 4), 0.25))[0] == pytest.approx(math.log(4), abs=1e-12)
    assert entropy_term(_row(0.0, 1.0, 0.0))[0] == pytest.approx(0.0, abs=1e-12)
    assert entropy_term(_row(0.5, 0.5))[0] == pytest.approx(0.69315, abs=1e-5)


# ---------------------------------------------------------------- SelectiveNet


def _selnet_inputs(n=4, m=3, seed=0):
    rng = np.random.default_rng(seed)
    return softmax(rng.normal(size=(n, m))), rng.uniform(0.1, 0.9, size=n), softmax(rng.normal(size=(n, m))), rng.integers(0, m, size=n)


def test_selnet_full_selection_reduces_to_ce():
    s, _, v, y = _selnet_inputs()
    k = np.ones(4)
    ce_s = -np.mean(np.log(s[np.arange(4), y]))
    ce_v = -np.mean(np.log(v[np.arange(4), y]))
    value, _ = loss_selnet(s, k, v, y, 0.7, 0.5, 32.0)
    assert value == pytest.approx(0.5 * ce_s + 0.5 * ce_v, abs=1e-12)


def test_selnet_coverage_penalty_arithmetic():
    s, _, v, y = _selnet_inputs()
    k = np.full(4, 0.65)
    at_c, _ = loss_selnet(s, k, v, y, 0.65, 1.0, 32.0)
    below, _ = loss_selnet(s, k, v, y, 0.70, 1.0, 32.0)
    assert below - at_c == pytest.approx(32 * 0.05**2, abs=1e-12)
    assert below - at_c == pytest.approx(0.08, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_selnet_penalty_vanishes_above_target(seed, c):
    s, k, v, y = _selnet_inputs(seed=seed)
    a, _ = loss_selnet(s, k, v, y, min(c, k.mean()), 0.5, 32.0)
    b, _ = loss_selnet(s, k, v, y, min(c, k.mean()), 0.5, 1e6)
    assert a == pytest.approx(b, rel=1e-12)


def test_selnet_alpha_one_drops_auxiliary():
    s, k, v, y = _selnet_inputs()
    a, _ = loss_selnet(s, k, v, y, 0.7, 1.0, 32.0)
    b, _ = loss_selnet(s, k, softmax(np.zeros((4, 3))), y, 0.7, 1.0, 32.0)
    assert a == b


def test_selnet_zero_selection_is_degenerate():
    s, _, v, y = _selnet_inputs()
    with pytest.raises(DegenerateSelectionError):
        loss_selnet(s, np.zeros(4), v, y, 0.7, 0.5, 32.0)


def test_selnet_em_examples():
    s, k, v, y = _selnet_inputs()
    assert loss_selnet_em(s, k, v, y, 0.7, 0.5, 32.0, 0.0)[0] == loss_selnet(s, k, v, y, 0.7, 0.5, 32.0)[0]
    s2 = np.full((4, 2), 0.5)
    v2 = np.full((4, 2), 0.5)
    y2 = np.array([0, 1, 0, 1])
    diff = loss_selnet_em(s2, k, v2, y2, 0.7, 0.5, 32.0, 0.1)[0] - loss_selnet(s2, k, v2, y2, 0.7, 0.5, 32.0)[0]
    assert diff == pytest.approx(0.1 * math.log(2), abs=1e-12)
    assert diff == pytest.approx(0.06931, abs=1e-5)


@pytest.mark.parametrize("kwargs", [dict(c=0.0), dict(c=1.2), dict(alpha=0.0), dict(lam=0.0), dict(beta=-1.0)])
def test_selnet_hyperparameter_ranges(kwargs):
    with pytest.raises(InvalidHyperparameterError):
        SelNetLoss(**{"c": 0.7, **kwargs})


# ---------------------------------------------------------------- ConfidNet / REG / SELE


def test_mse_examples():
    assert loss_mse(np.array([0.3, 0.9]), np.array([0.3, 0.9]))[0] == 0.0
    assert loss_mse(np.array([0.8]), np.array([0.6]))[0] == pytest.approx(0.04, abs=1e-15)
    assert loss_mse(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert loss_mse(np.array([0.3]), np.array([1.0]))[0] == pytest.approx(0.49, abs=1e-15)


def test_sele_examples():
    assert loss_sele(np.array([0.0]), np.array([0.9]), np.array([0.1]))[0] == 0.0
    assert loss_sele(np.array([1.0]), np.array([0.4]), np.array([0.4]))[0] == pytest.approx(math.log(2), abs=1e-15)
    assert loss_sele(np.array([1.0]), np.array([0.0]), np.array([2.0]))[0] == pytest.approx(2.12693, abs=1e-5)


def test_sele_pairs_are_distinct_and_budgeted():
    from abstain_bench.nn import Batch

    loss = SELELoss(50)
    batch = Batch(np.zeros((7, 2)), np.zeros(7, dtype=int), np.arange(7), target=np.ones(7))
    loss.prepare(batch, {}, 0, np.random.default_rng(0))
    assert batch.pairs.shape == (50, 2)
    assert np.all(batch.pairs[:, 0] != batch.pairs[:, 1])
    single = Batch(np.zeros((1, 2)), np.zeros(1, dtype=int), np.arange(1), target=np.ones(1))
    loss.prepare(single, {}, 0, np.random.default_rng(0))
    value, grad = loss.value_and_grad({"uncertainty": np.zeros((1, 1))}, single)
    assert value == 0.0 and not grad["uncertainty"].any()


# ---------------------------------------------------------------- gradients


def test_softmax_backward_matches_jacobian():
    rng = np.random.default_rng(0)
    p = softmax(rng.normal(size=(1, 4)))[0]
    g = rng.normal(size=4)
    jac = np.diag(p) - np.outer(p, p)
    assert np.allclose(softmax_backward(p[None], g[None])[0], jac @ g, atol=1e-15)


@pytest.mark.parametrize("name", LOSS_NAMES)
def test_loss_gradients_match_finite_differences(name):
    assert gradient_suite(n_nets=5, seed=11, names=(name,))[name] < 1e-4
