"""Training objectives of the abstention baselines.

Every ``loss_*`` function works on probabilities (or sigmoid scores) and
returns ``(value, gradient)`` where the gradient is taken with respect to
its probability inputs. The ``*Loss`` classes wrap them for
:func:`abstain_bench.nn.train`, chaining through softmax/sigmoid to reach
the raw head outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSelectionError, InvalidHyperparameterError, InvalidInputError
from .nn import AUXILIARY, PREDICTIVE, SELECTIVE, UNCERTAINTY, Batch, CrossEntropy, sigmoid, softmax

PROB_FLOOR = 1e-12

__all__ = [
    "CrossEntropy",
    "DGLoss",
    "SATLoss",
    "SatState",
    "SelNetLoss",
    "SquaredErrorLoss",
    "SELELoss",
    "entropy_term",
    "loss_dg",
    "loss_mse",
    "loss_sat",
    "loss_sele",
    "loss_selnet",
    "loss_selnet_em",
    "sat_update_targets",
    "softmax_backward",
]


def _safe_log(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    live = p > PROB_FLOOR
    return np.log(np.maximum(p, PROB_FLOOR)), live


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax rows back to the logits."""
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# probability-space objectives
# ---------------------------------------------------------------------------


def loss_dg(probs: np.ndarray, y: np.ndarray, o: float) -> tuple[float, np.ndarray]:
    """Gambler's loss ``mean -log(s_y + s_abstain / o)``; the last column abstains."""
    if not o > 1:
        raise InvalidHyperparameterError("reward o must exceed 1")
    n = probs.shape[0]
    rows = np.arange(n)
    q = probs[rows, y] + probs[:, -1] / o
    logq, live = _safe_log(q)
    value = -float(logq.sum()) / n
    coef = np.where(live, -1.0 / (n * np.maximum(q, PROB_FLOOR)), 0.0)
    grad = np.zeros_like(probs)
    grad[rows, y] += coef
    grad[:, -1] += coef / o
    return value, grad


@dataclass
class SatState:
    """Per-instance soft targets over the m real classes."""

    targets: np.ndarray

    @classmethod
    def one_hot(cls, y: np.ndarray, m: int) -> "SatState":
        t = np.zeros((len(y), m))
        t[np.arange(len(y)), y] = 1.0
        return cls(t)


def sat_update_targets(
    state: SatState,
    probs: np.ndarray,
    gamma: float,
    epoch: int,
    warmup: int,
    index: np.ndarray | None = None,
) -> SatState:
    """Exponential moving average of targets toward the class probabilities.

    ``probs`` holds the m class probabilities of the rows in ``index`` (all
    rows when ``index`` is None). Before ``warmup`` epochs the state is
    returned unchanged.
    """
    if not 0.9 <= gamma <= 0.99:
        raise InvalidHyperparameterError("gamma must lie in [0.9, 0.99]")
    if epoch < warmup:
        return state
    t = state.targets.copy()
    sel = slice(None) if index is None else index
    t[sel] = gamma * t[sel] + (1.0 - gamma) * probs
    return SatState(t)


def loss_sat(probs: np.ndarray, targets: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """``-mean(sum_j t_j log s_j + (1 - t_y) log s_abstain)`` over m+1 columns."""
    n, width = probs.shape
    m = width - 1
    if targets.shape != (n, m):
        raise InvalidInputError("targets must be (n, m) for (n, m+1) probabilities")
    w = np.empty_like(probs)
    w[:, :m] = targets
    w[:, m] = 1.0 - targets[np.arange(n), y]
    logp, live = _safe_log(probs)
    value = -float(np.sum(w * logp)) / n
    grad = np.where(live, -w / (n * np.maximum(probs, PROB_FLOOR)), 0.0)
    return value, grad


def entropy_term(probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean Shannon entropy (nats) of probability rows; ``0 log 0 = 0``."""
    n = probs.shape[0]
    logp = np.log(np.maximum(probs, np.finfo(np.float64).tiny))
    plogp = np.where(probs > 0, probs * logp, 0.0)
    value = -float(plogp.sum()) / n
    grad = -(logp + 1.0) / n
    return value, grad


def _ce_rows(probs: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = np.arange(len(y))
    py = probs[rows, y]
    logpy, live = _safe_log(py)
    return -logpy, live, py


def loss_selnet(
    s_probs: np.ndarray,
    k: np.ndarray,
    v_probs: np.ndarray,
    y: np.ndarray,
    c: float,
    alpha: float,
    lam: float,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """SelectiveNet objective.

    ``alpha * (sum_i ce_i k_i / sum_i k_i + lam * max(0, c - mean k)^2)
    + (1 - alpha) * mean ce(v)``. Returns gradients for ``(s_probs, k, v_probs)``.
    """
    n = len(y)
    k = np.asarray(k, dtype=np.float64).reshape(-1)
    total_k = float(k.sum())
    if n == 0 or total_k <= 0:
        raise DegenerateSelectionError("selective head accepts nothing in this batch")
    rows = np.arange(n)
    ce_s, live_s, py_s = _ce_rows(s_probs, y)
    ce_v, live_v, py_v = _ce_rows(v_probs, y)
    weighted = float(np.dot(ce_s, k))
    coverage = total_k / n
    gap = max(0.0, c - coverage)
    value = alpha * (weighted / total_k + lam * gap**2) + (1 - alpha) * float(ce_v.mean())

    d_ce_s = alpha * k / total_k
    g_s = np.zeros_like(s_probs)
    g_s[rows, y] = np.where(live_s, -d_ce_s / np.maximum(py_s, PROB_FLOOR), 0.0)
    g_k = alpha * ((ce_s * total_k - weighted) / total_k**2 - 2.0 * lam * gap / n)
    g_v = np.zeros_like(v_probs)
    g_v[rows, y] = np.where(live_v, -(1 - alpha) / (n * np.maximum(py_v, PROB_FLOOR)), 0.0)
    return value, (g_s, g_k, g_v)


def loss_selnet_em(s_probs, k, v_probs, y, c, alpha, lam, beta):
    """:func:`loss_selnet` plus ``beta`` times the mean entropy of ``s_probs``."""
    value, (g_s, g_k, g_v) = loss_selnet(s_probs, k, v_probs, y, c, alpha, lam)
    if beta:
        h, g_h = entropy_term(s_probs)
        value += beta * h
        g_s = g_s + beta * g_h
    return value, (g_s, g_k, g_v)


def loss_mse(scores: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = np.asarray(scores, dtype=np.float64).reshape(-1) - np.asarray(target, dtype=np.float64).reshape(-1)
    n = len(diff)
    return float(np.dot(diff, diff)) / n, 2.0 * diff / n


def loss_sele(weights: np.ndarray, f_first: np.ndarray, f_second: np.ndarray) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean of ``w * log(1 + exp(f_second - f_first))`` over sampled pairs.

    ``weights`` is the 0-1 loss of the first instance of each pair. Returns
    gradients for ``(f_first, f_second)``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(w) == 0:
        raise InvalidInputError("at least one pair is required")
    delta = np.asarray(f_second, dtype=np.float64) - np.asarray(f_first, dtype=np.float64)
    n = len(w)
    value = float(np.dot(w, np.logaddexp(0.0, delta))) / n
    slope = w * sigmoid(delta) / n
    return value, (-slope, slope)


# ---------------------------------------------------------------------------
# training wrappers
# ---------------------------------------------------------------------------


class DGLoss:
    heads = (PREDICTIVE,)

    def __init__(self, o: float):
        if not o > 1:
            raise InvalidHyperparameterError("reward o must exceed 1")
        self.o = o

    def prepare(self, batch, outputs, epoch, rng):
        pass

    def value_and_grad(self, outputs, batch):
        p = softmax(outputs[PREDICTIVE])
        value, gp = loss_dg(p, batch.y, self.o)
        return value, {PREDICTIVE: softmax_backward(p, gp)}


class SATLoss:
    """Self-adaptive training, optionally with an entropy term (``beta > 0``)."""

    heads = (PREDICTIVE,)

    def __init__(self, gamma: float, warmup: int, y: np.ndarray, m: int, beta: float = 0.0):
        if not 0.9 <= gamma <= 0.99:
            raise InvalidHyperparameterError("gamma must lie in [0.9, 0.99]")
        if warmup < 0 or beta < 0:
            raise InvalidHyperparameterError("warmup and beta must be nonnegative")
        self.gamma = gamma
        self.warmup = warmup
        self.beta = beta
        self.m = m
        self.state = SatState.one_hot(np.asarray(y), m)

    def prepare(self, batch: Batch, outputs, epoch, rng):
        if epoch >= self.warmup:
            class_probs = softmax(outputs[PREDICTIVE][:, : self.m])
            self.state = sat_update_targets(self.state, class_probs, self.gamma, epoch, self.warmup, batch.index)

    def value_and_grad(self, outputs, batch):
        z = outputs[PREDICTIVE]
        p = softmax(z)
        value, gp = loss_sat(p, self.state.targets[batch.index], batch.y)
        grad = softmax_backward(p, gp)
        if self.beta:
            q = softmax(z[:, : self.m])
            h, gq = entropy_term(q)
            value += self.beta * h
            grad[:, : self.m] += self.beta * softmax_backward(q, gq)
        return value, {PREDICTIVE: grad}


class SelNetLoss:
    heads = (PREDICTIVE, SELECTIVE, AUXILIARY)

    def __init__(self, c: float, alpha: float = 0.5, lam: float = 32.0, beta: float = 0.0):
        if not 0 < c <= 1:
            raise InvalidHyperparameterError("target coverage must lie in (0, 1]")
        if not 0 < alpha <= 1:
            raise InvalidHyperparameterError("alpha must lie in (0, 1]")
        if not lam > 0 or beta < 0:
            raise InvalidHyperparameterError("lambda must be positive and beta nonnegative")
        self.c, self.alpha, self.lam, self.beta = c, alpha, lam, beta

    def prepare(self, batch, outputs, epoch, rng):
        pass

    def value_and_grad(self, outputs, batch):
        s = softmax(outputs[PREDICTIVE])
        k = sigmoid(outputs[SELECTIVE][:, 0])
        v = softmax(outputs[AUXILIARY])
        value, (gs, gk, gv) = loss_selnet_em(s, k, v, batch.y, self.c, self.alpha, self.lam, self.beta)
        return value, {
            PREDICTIVE: softmax_backward(s, gs),
            SELECTIVE: (gk * k * (1.0 - k))[:, None],
            AUXILIARY: softmax_backward(v, gv),
        }


class SquaredErrorLoss:
    """Regress a sigmoid head onto ``batch.target`` (ConfidNet and REG)."""

    def __init__(self, head: str = UNCERTAINTY):
        self.head = head
        self.heads = (head,)

    def prepare(self, batch, outputs, epoch, rng):
        pass

    def value_and_grad(self, outputs, batch):
        f = sigmoid(outputs[self.head][:, 0])
        value, gf = loss_mse(f, batch.target)
        return value, {self.head: (gf * f * (1.0 - f))[:, None]}


@dataclass
class SELELoss:
    """Pairwise ranking surrogate on a sigmoid uncertainty head.

    ``batch.target`` holds the 0-1 loss of the frozen classifier. Each
    batch samples ``pair_budget`` ordered pairs of distinct rows (default:
    the batch size). One-row batches contribute nothing.
    """

    pair_budget: int | None = None
    heads: tuple[str, ...] = field(default=(UNCERTAINTY,), init=False)

    def prepare(self, batch, outputs, epoch, rng):
        n = len(batch.y)
        if n < 2:
            batch.pairs = np.zeros((0, 2), dtype=np.int64)
            return
        count = self.pair_budget or n
        first = rng.integers(0, n, size=count)
        second = (first + rng.integers(1, n, size=count)) % n
        batch.pairs = np.stack([first, second], axis=1)

    def value_and_grad(self, outputs, batch):
        raw = outputs[UNCERTAINTY]
        if batch.pairs is None or len(batch.pairs) == 0:
            return 0.0, {UNCERTAINTY: np.zeros_like(raw)}
        f = sigmoid(raw[:, 0])
        i, j = batch.pairs[:, 0], batch.pairs[:, 1]
        value, (g1, g2) = loss_sele(batch.target[i], f[i], f[j])
        gf = np.zeros_like(f)
        np.add.at(gf, i, g1)
        np.add.at(gf, j, g2)
        return value, {UNCERTAINTY: (gf * f * (1.0 - f))[:, None]}
