"""Finite-difference check of every training loss on random small networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import DGLoss, SATLoss, SELELoss, SelNetLoss, SquaredErrorLoss
from .nn import (
    AUXILIARY,
    SELECTIVE,
    UNCERTAINTY,
    Batch,
    CrossEntropy,
    HeadedNet,
    HeadSpec,
    MlpSpec,
    grad_check,
    predictive_head,
    uncertainty_head,
)
from .seeding import derive_seed

LOSS_NAMES = ("CE", "DG", "SAT", "SAT+EM", "SelNet", "SelNet+EM", "ConfidNet", "REG", "SELE")
_ACTIVATIONS = ("tanh", "sigmoid", "relu")


@dataclass(frozen=True)
class _Case:
    loss: object
    net: HeadedNet
    batch: Batch
    trainable: tuple[str, ...] | None = None


def _jitter(net: HeadedNet, rng: np.random.Generator) -> HeadedNet:
    # zero biases put ReLU units of stacked layers exactly on their kink
    layers = [*net.body, *(layer for head in net.heads.values() for layer in head)]
    for layer in layers:
        layer.b += rng.normal(0.0, 0.3, size=layer.b.shape)
        layer.W += rng.normal(0.0, 0.1, size=layer.W.shape)
    return net


def _case(name: str, rng: np.random.Generator, seed: int) -> _Case:
    d = int(rng.integers(2, 5))
    m = int(rng.integers(2, 5))
    n = int(rng.integers(4, 9))
    hidden = tuple(int(w) for w in rng.integers(2, 6, size=rng.integers(1, 3)))
    act = _ACTIVATIONS[int(rng.integers(len(_ACTIVATIONS)))]
    X = rng.standard_normal((n, d))
    y = rng.integers(0, m, size=n)
    batch = Batch(X, y, np.arange(n))

    def net(*heads):
        return _jitter(HeadedNet.build(MlpSpec(d, hidden, act, heads), seed), rng)

    if name == "CE":
        return _Case(CrossEntropy(), net(predictive_head(m)), batch)
    if name == "DG":
        return _Case(DGLoss(float(rng.uniform(1.1, m))), net(predictive_head(m + 1)), batch)
    if name in ("SAT", "SAT+EM"):
        beta = float(rng.uniform(0.01, 0.5)) if name == "SAT+EM" else 0.0
        loss = SATLoss(float(rng.uniform(0.9, 0.99)), 0, y, m, beta=beta)
        return _Case(loss, net(predictive_head(m + 1)), batch)
    if name in ("SelNet", "SelNet+EM"):
        beta = float(rng.uniform(0.01, 0.5)) if name == "SelNet+EM" else 0.0
        heads = (predictive_head(m), HeadSpec(SELECTIVE, "sigmoid", 1), HeadSpec(AUXILIARY, "softmax", m))
        loss = SelNetLoss(float(rng.uniform(0.3, 1.0)), float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.5, 64.0)), beta)
        return _Case(loss, net(*heads), batch)
    if name == "ConfidNet":
        base = _jitter(net(predictive_head(m)).add_head(uncertainty_head((4,)), derive_seed(seed, "head")), rng)
        batch.target = rng.uniform(0, 1, size=n)
        return _Case(SquaredErrorLoss(UNCERTAINTY), base, batch, (UNCERTAINTY,))
    if name == "REG":
        batch.target = rng.integers(0, 2, size=n).astype(np.float64)
        return _Case(SquaredErrorLoss(UNCERTAINTY), net(uncertainty_head((4,))), batch)
    if name == "SELE":
        batch.target = rng.integers(0, 2, size=n).astype(np.float64)
        return _Case(SELELoss(int(rng.integers(3, 12))), net(uncertainty_head((4,))), batch)
    raise KeyError(name)


def gradient_suite(n_nets: int = 20, seed: int = 0, names=LOSS_NAMES) -> dict[str, float]:
    """Worst relative gradient error per loss over ``n_nets`` random networks."""
    worst = {}
    for name in names:
        errs = []
        for i in range(n_nets):
            s = derive_seed(seed, "gradcheck", name, i)
            case = _case(name, np.random.default_rng(s), s)
            errs.append(grad_check(case.loss, case.net, case.batch, trainable=case.trainable, seed=s))
        worst[name] = max(errs)
    return worst
