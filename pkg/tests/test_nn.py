import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from abstain_bench.data import LabeledDataset, synth_gaussian
from abstain_bench.errors import InvalidHyperparameterError, InvalidInputError, ShapeError, TrainingDivergedError
from abstain_bench.losses import SATLoss, SelNetLoss
from abstain_bench.nn import (
    AUXILIARY,
    PREDICTIVE,
    SELECTIVE,
    UNCERTAINTY,
    Batch,
    CrossEntropy,
    Dense,
    HeadedNet,
    HeadSpec,
    MlpSpec,
    OptimizerConfig,
    TrainConfig,
    grad_check,
    predictive_head,
    softmax,
    train,
    uncertainty_head,
)


def _net(d=3, hidden=(5,), m=3, act="tanh", seed=0, heads=None):
    return HeadedNet.build(MlpSpec(d, hidden, act, heads or (predictive_head(m),)), seed)


# ---------------------------------------------------------------- softmax


def test_softmax_symmetric_row():
    assert np.allclose(softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]], atol=1e-15)


def test_softmax_ln2_row():
    assert np.allclose(softmax(np.array([[math.log(2.0), 0.0]])), [[2 / 3, 1 / 3]], atol=1e-15)


def test_softmax_large_logit_against_extended_precision():
    getcontext().prec = 60
    e = Decimal(-1000).exp()
    oracle = [1 / (1 + e), e / (1 + e)]
    got = softmax(np.array([[1000.0, 0.0]]))[0]
    assert np.all(np.isfinite(got))
    assert got[0] == pytest.approx(float(oracle[0]), abs=1e-15)
    assert got[1] == pytest.approx(float(oracle[1]), abs=1e-300)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax(np.array([[np.nan, 0.0]]))
    with pytest.raises(InvalidInputError):
        softmax(np.array([[np.inf, 0.0]]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-700, 700)))
def test_softmax_rows_sum_to_one(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------- forward


def test_zero_net_gives_uniform_rows():
    net = _net(d=2, hidden=(4,), m=2)
    for p in net.parameters():
        p[...] = 0.0
    out = net.predict(np.random.default_rng(0).normal(size=(5, 2)))[PREDICTIVE]
    assert np.array_equal(out, np.full((5, 2), 0.5))


def test_single_linear_layer_matches_hand_product():
    net = HeadedNet.build(MlpSpec(2, (), "relu", (predictive_head(2),)), 0)
    layer = net.heads[PREDICTIVE][0]
    layer.W[...] = [[1.0, -2.0], [0.5, 3.0]]
    layer.b[...] = [0.25, -1.0]
    x = np.array([[2.0, -1.0]])
    # hand: [2*1 + -1*0.5 + 0.25, 2*-2 + -1*3 - 1] = [1.75, -8]
    logits = net.forward(x)[PREDICTIVE]
    assert np.allclose(logits, [[1.75, -8.0]], atol=1e-15)


def test_forward_row_independence_and_permutation():
    net = _net(d=4, hidden=(6, 5), m=3, act="relu")
    X = np.random.default_rng(1).normal(size=(9, 4))
    full = net.predict(X)[PREDICTIVE]
    for i in range(9):
        assert np.allclose(net.predict(X[i : i + 1])[PREDICTIVE][0], full[i], atol=1e-15)
    perm = np.random.default_rng(2).permutation(9)
    assert np.allclose(net.predict(X[perm])[PREDICTIVE][np.argsort(perm)], full, atol=1e-15)


def test_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        _net(d=3).forward(np.zeros((2, 4)))


def test_scalar_heads_in_unit_interval():
    heads = (predictive_head(3), HeadSpec(SELECTIVE, "sigmoid", 1), HeadSpec(AUXILIARY, "softmax", 3))
    net = _net(heads=heads).add_head(uncertainty_head((4,)), 1)
    out = net.predict(np.random.default_rng(3).normal(size=(20, 3)) * 10)
    assert out[SELECTIVE].shape == (20,) and out[UNCERTAINTY].shape == (20,)
    for key in (SELECTIVE, UNCERTAINTY):
        assert np.all((out[key] >= 0) & (out[key] <= 1))
    assert np.allclose(out[AUXILIARY].sum(axis=1), 1.0, atol=1e-9)


def test_glorot_bounds_and_zero_bias():
    net = _net(d=10, hidden=(30,), m=4)
    layer = net.body[0]
    limit = math.sqrt(6.0 / (10 + 30))
    assert np.all(np.abs(layer.W) <= limit)
    assert np.all(layer.b == 0)


def test_spec_rejects_zero_width():
    with pytest.raises(InvalidHyperparameterError):
        MlpSpec(3, (0,), "relu", (predictive_head(2),))


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_roundtrip(tmp_path):
    net = _net(d=3, hidden=(4, 2), m=3, seed=5)
    path = tmp_path / "w.abnn"
    net.save(path)
    assert path.read_bytes()[:4] == b"ABNN"
    fresh = _net(d=3, hidden=(4, 2), m=3, seed=99)
    loaded = fresh.load(path)
    assert np.array_equal(loaded.flat_parameters(), net.flat_parameters())


# ---------------------------------------------------------------- training


def _blobs(n=400, sep=6.0, seed=0):
    return synth_gaussian(n, 2, (0.5, 0.5), sep, seed)


def test_training_separable_blob_reaches_high_accuracy():
    data = _blobs()
    # oracle: the Bayes rule for unit Gaussians at distance 6 errs with prob Phi(-3)
    net = train(
        _net(d=2, hidden=(8,), m=2, act="relu"),
        data,
        CrossEntropy(),
        OptimizerConfig("adam", 0.01),
        TrainConfig(60, 32, 0),
    ).net
    acc = np.mean(net.predict(data.X)[PREDICTIVE].argmax(axis=1) == data.y)
    assert acc >= 0.99


def test_zero_learning_rate_is_fixed_point():
    data = _blobs(100)
    net = _net(d=2, hidden=(4,), m=2)
    for kind in ("sgd", "adam"):
        out = train(net, data, CrossEntropy(), OptimizerConfig(kind, 0.0, momentum=0.9 if kind == "sgd" else 0.0), TrainConfig(3, 16, 0)).net
        assert np.array_equal(out.flat_parameters(), net.flat_parameters())


def test_training_is_deterministic():
    data = _blobs(150)
    args = (CrossEntropy(), OptimizerConfig("sgd", 0.05, momentum=0.9, nesterov=True, weight_decay=1e-4), TrainConfig(4, 16, 7))
    a = train(_net(d=2, m=2), data, *args)
    b = train(_net(d=2, m=2), data, *args)
    assert np.array_equal(a.net.flat_parameters(), b.net.flat_parameters())
    assert a.history == b.history and all(np.isfinite(a.history))


def test_divergence_raises_with_epoch():
    data = _blobs(64)
    with pytest.raises(TrainingDivergedError) as info:
        train(_net(d=2, m=2, act="relu"), data, CrossEntropy(), OptimizerConfig("sgd", 1e200), TrainConfig(5, 64, 0))
    assert info.value.epoch >= 0


def test_frozen_groups_stay_bit_identical():
    data = _blobs(100)
    net = _net(d=2, hidden=(4,), m=2).add_head(uncertainty_head((3,)), 4)
    target = np.random.default_rng(0).uniform(size=data.n)
    from abstain_bench.losses import SquaredErrorLoss

    out = train(net, data, SquaredErrorLoss(), OptimizerConfig("adam", 0.01), TrainConfig(3, 32, 0), targets=target, trainable=(UNCERTAINTY,)).net
    for a, b in zip(out.parameters(["body", PREDICTIVE]), net.parameters(["body", PREDICTIVE])):
        assert np.array_equal(a, b)
    assert not np.array_equal(out.parameters([UNCERTAINTY])[0], net.parameters([UNCERTAINTY])[0])


def test_sgd_single_step_matches_hand_update():
    # one sample, one linear layer: the update is lr * (p - onehot) x^T
    data = LabeledDataset(np.array([[1.0, 2.0]]), np.array([1]), 2)
    net = HeadedNet.build(MlpSpec(2, (), "relu", (predictive_head(2),)), 0)
    W0 = net.heads[PREDICTIVE][0].W.copy()
    b0 = net.heads[PREDICTIVE][0].b.copy()
    p = softmax(data.X @ W0 + b0)[0]
    g = p - np.array([0.0, 1.0])
    out = train(net, data, CrossEntropy(), OptimizerConfig("sgd", 0.1), TrainConfig(1, 1, 0)).net
    assert np.allclose(out.heads[PREDICTIVE][0].W, W0 - 0.1 * np.outer(data.X[0], g), atol=1e-14)
    assert np.allclose(out.heads[PREDICTIVE][0].b, b0 - 0.1 * g, atol=1e-14)


def test_lr_halves_every_25_epochs():
    opt = OptimizerConfig("sgd", 0.8, time_decay=True)
    assert [opt.lr_at(e) for e in (0, 24, 25, 49, 50, 75)] == [0.8, 0.8, 0.4, 0.4, 0.2, 0.1]
    assert OptimizerConfig("sgd", 0.8).lr_at(100) == 0.8


@pytest.mark.parametrize("kwargs", [dict(kind="rmsprop"), dict(learning_rate=-1.0), dict(momentum=1.0), dict(weight_decay=-0.1)])
def test_optimizer_config_validation(kwargs):
    base = dict(kind="sgd", learning_rate=0.1)
    with pytest.raises(InvalidHyperparameterError):
        OptimizerConfig(**{**base, **kwargs})


def test_train_config_validation():
    with pytest.raises(InvalidHyperparameterError):
        TrainConfig(0, 10, 0)
    with pytest.raises(InvalidHyperparameterError):
        TrainConfig(1, 0, 0)


# ---------------------------------------------------------------- grad_check


def _batch(n=6, d=3, m=3, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(n, d)), rng.integers(0, m, size=n), np.arange(n))


def test_grad_check_cross_entropy():
    assert grad_check(CrossEntropy(), _net(), _batch()) < 1e-4


def test_grad_check_sat_after_warmup():
    b = _batch()
    net = _net(heads=(predictive_head(4),))
    assert grad_check(SATLoss(0.9, 2, b.y, 3), net, b, epoch=5) < 1e-4


def test_grad_check_selnet_reference_setting():
    heads = (predictive_head(3), HeadSpec(SELECTIVE, "sigmoid", 1), HeadSpec(AUXILIARY, "softmax", 3))
    assert grad_check(SelNetLoss(0.7, 0.5, 32.0), _net(heads=heads), _batch()) < 1e-4


def test_grad_check_detects_wrong_gradient():
    class Broken(CrossEntropy):
        def value_and_grad(self, outputs, batch):
            v, g = super().value_and_grad(outputs, batch)
            return v, {PREDICTIVE: 2.0 * g[PREDICTIVE]}

    assert grad_check(Broken(), _net(), _batch()) > 0.1


@pytest.mark.parametrize("h", [1e-8, 1e-3])
def test_grad_check_step_range(h):
    with pytest.raises(InvalidHyperparameterError):
        grad_check(CrossEntropy(), _net(), _batch(), h)


def test_dense_is_plain_container():
    layer = Dense(np.ones((2, 3)), np.zeros(3))
    assert layer.W.shape == (2, 3)
