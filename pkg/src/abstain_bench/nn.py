"""Dense feed-forward networks with hand-written backpropagation.

A :class:`HeadedNet` is a shared body of dense layers followed by one or
more named heads. Heads emit raw pre-activation outputs; softmax heads are
interpreted as class logits and sigmoid heads as a single score in [0, 1].
Losses consume the raw head outputs and return the gradient with respect to
them, so the network only has to backpropagate through its own layers.

Checkpoint layout (little-endian)::

    b"ABNN"              magic
    u32                  format version (1)
    u32                  number of parameter arrays L
    L x { u32 rows, u32 cols, rows*cols f64 values (row-major) }

Bias vectors are stored as 1 x n arrays. Arrays appear in the order of
:meth:`HeadedNet.parameters`. Architecture is not stored; load into a net
built from the same :class:`MlpSpec`.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import InvalidHyperparameterError, InvalidInputError, ShapeError, TrainingDivergedError

PREDICTIVE = "predictive"
SELECTIVE = "selective"
AUXILIARY = "auxiliary"
UNCERTAINTY = "uncertainty"

LOG_EPS = float(np.log(1e-12))


# ---------------------------------------------------------------------------
# elementwise pieces
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax received non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    raise InvalidHyperparameterError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


# ---------------------------------------------------------------------------
# architecture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeadSpec:
    """One output head.

    ``kind`` is ``"softmax"`` (``out_dim`` logits) or ``"sigmoid"`` (one score).
    ``hidden`` lists widths of extra dense layers between the body and the
    final linear map.
    """

    name: str
    kind: str
    out_dim: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("softmax", "sigmoid"):
            raise InvalidHyperparameterError(f"unknown head kind {self.kind!r}")
        if self.kind == "sigmoid" and self.out_dim != 1:
            raise InvalidHyperparameterError("sigmoid heads emit exactly one value")
        if self.out_dim < 1 or any(w < 1 for w in self.hidden):
            raise InvalidHyperparameterError("head widths must be >= 1")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    activation: str = "relu"
    heads: tuple[HeadSpec, ...] = ()

    def __post_init__(self):
        if self.input_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise InvalidHyperparameterError("all widths must be >= 1")
        if self.activation not in ("relu", "sigmoid", "tanh"):
            raise InvalidHyperparameterError(f"unknown activation {self.activation!r}")
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise InvalidHyperparameterError("duplicate head names")

    def with_heads(self, *heads: HeadSpec) -> "MlpSpec":
        return MlpSpec(self.input_dim, tuple(self.hidden_widths), self.activation, tuple(heads))


def predictive_head(n_out: int) -> HeadSpec:
    return HeadSpec(PREDICTIVE, "softmax", n_out)


def uncertainty_head(hidden: tuple[int, ...] = (64, 32, 16)) -> HeadSpec:
    return HeadSpec(UNCERTAINTY, "sigmoid", 1, tuple(hidden))


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Dense:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Dense(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out))


class HeadedNet:
    """Shared dense body with named output heads."""

    def __init__(self, spec: MlpSpec, body: list[Dense], heads: dict[str, list[Dense]]):
        self.spec = spec
        self.body = body
        self.heads = heads

    @classmethod
    def build(cls, spec: MlpSpec, seed: int | np.random.Generator) -> "HeadedNet":
        rng = np.random.default_rng(seed)
        body = []
        width = spec.input_dim
        for w in spec.hidden_widths:
            body.append(_glorot(rng, width, w))
            width = w
        heads = {}
        for h in spec.heads:
            layers = []
            fan = width
            for w in (*h.hidden, h.out_dim):
                layers.append(_glorot(rng, fan, w))
                fan = w
            heads[h.name] = layers
        return cls(spec, body, heads)

    @property
    def feature_dim(self) -> int:
        return self.spec.hidden_widths[-1] if self.spec.hidden_widths else self.spec.input_dim

    def head_spec(self, name: str) -> HeadSpec:
        for h in self.spec.heads:
            if h.name == name:
                return h
        raise KeyError(name)

    def add_head(self, head: HeadSpec, seed: int | np.random.Generator) -> "HeadedNet":
        """Return a copy with an extra freshly initialised head."""
        rng = np.random.default_rng(seed)
        net = self.copy()
        layers = []
        fan = self.feature_dim
        for w in (*head.hidden, head.out_dim):
            layers.append(_glorot(rng, fan, w))
            fan = w
        net.heads[head.name] = layers
        net.spec = self.spec.with_heads(*self.spec.heads, head)
        return net

    def copy(self) -> "HeadedNet":
        return copy.deepcopy(self)

    # parameters -----------------------------------------------------------

    def groups(self) -> list[tuple[str, list[Dense]]]:
        return [("body", self.body)] + [(h.name, self.heads[h.name]) for h in self.spec.heads]

    def parameters(self, groups: Sequence[str] | None = None) -> list[np.ndarray]:
        out = []
        for name, layers in self.groups():
            if groups is not None and name not in groups:
                continue
            for layer in layers:
                out.extend((layer.W, layer.b))
        return out

    def flat_parameters(self) -> np.ndarray:
        params = self.parameters()
        return np.concatenate([p.ravel() for p in params]) if params else np.zeros(0)

    # forward / backward ---------------------------------------------------

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.spec.input_dim:
            raise ShapeError(f"expected (n, {self.spec.input_dim}) input, got {X.shape}")
        return X

    def forward(self, X: np.ndarray, *, return_cache: bool = False):
        """Raw head outputs keyed by head name.

        Softmax heads yield logits; sigmoid heads yield pre-activations of
        shape (n, 1). Use :meth:`predict` for transformed outputs.
        """
        X = self._check_input(X)
        act = self.spec.activation
        body_cache = []
        a = X
        for layer in self.body:
            z = a @ layer.W + layer.b
            a_next = _act(act, z)
            body_cache.append((a, z, a_next))
            a = a_next
        features = a
        outputs = {}
        head_caches = {}
        for h in self.spec.heads:
            layers = self.heads[h.name]
            hc = []
            a = features
            for layer in layers[:-1]:
                z = a @ layer.W + layer.b
                a_next = _act(act, z)
                hc.append((a, z, a_next))
                a = a_next
            last = layers[-1]
            outputs[h.name] = a @ last.W + last.b
            hc.append((a, None, None))
            head_caches[h.name] = hc
        if return_cache:
            return outputs, (body_cache, head_caches, features)
        return outputs

    def predict(self, X: np.ndarray) -> dict[str, np.ndarray]:
        """Transformed head outputs: probability rows or scores in [0, 1]."""
        raw = self.forward(X)
        out = {}
        for h in self.spec.heads:
            if h.kind == "softmax":
                out[h.name] = softmax(raw[h.name])
            else:
                out[h.name] = sigmoid(raw[h.name][:, 0])
        return out

    def backward(
        self, cache, grad_outputs: dict[str, np.ndarray], groups: Sequence[str] | None = None
    ) -> list[np.ndarray]:
        """Gradients for :meth:`parameters` (same ``groups`` filter, same order)."""
        body_cache, head_caches, features = cache
        act = self.spec.activation
        wanted = set(g for g, _ in self.groups()) if groups is None else set(groups)
        grads: dict[str, list[np.ndarray]] = {}
        d_features = np.zeros_like(features)
        need_body = "body" in wanted
        for h in self.spec.heads:
            layers = self.heads[h.name]
            g_out = grad_outputs.get(h.name)
            if g_out is None or not (h.name in wanted or need_body):
                if h.name in wanted:
                    grads[h.name] = [np.zeros_like(p) for layer in layers for p in (layer.W, layer.b)]
                continue
            hc = head_caches[h.name]
            layer_grads = []
            delta = np.asarray(g_out, dtype=np.float64)
            for i in range(len(layers) - 1, -1, -1):
                a_in = hc[i][0]
                layer_grads.append((a_in.T @ delta, delta.sum(axis=0)))
                delta = delta @ layers[i].W.T
                if i > 0:
                    _, z, a_out = hc[i - 1]
                    delta = delta * _act_grad(act, z, a_out)
            d_features += delta
            if h.name in wanted:
                layer_grads.reverse()
                grads[h.name] = [g for pair in layer_grads for g in pair]
        if need_body:
            layer_grads = []
            delta = d_features
            for i in range(len(self.body) - 1, -1, -1):
                a_in, z, a_out = body_cache[i]
                delta = delta * _act_grad(act, z, a_out)
                layer_grads.append((a_in.T @ delta, delta.sum(axis=0)))
                delta = delta @ self.body[i].W.T
            layer_grads.reverse()
            grads["body"] = [g for pair in layer_grads for g in pair]
        out = []
        for name, layers in self.groups():
            if name not in wanted:
                continue
            out.extend(grads.get(name) or [np.zeros_like(p) for layer in layers for p in (layer.W, layer.b)])
        return out

    # checkpoints ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        params = self.parameters()
        with open(path, "wb") as fh:
            fh.write(b"ABNN")
            fh.write(struct.pack("<II", 1, len(params)))
            for p in params:
                arr = np.atleast_2d(p)
                fh.write(struct.pack("<II", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def load(self, path: str | Path) -> "HeadedNet":
        """Return a copy of this net with parameters read from ``path``."""
        data = Path(path).read_bytes()
        if data[:4] != b"ABNN":
            raise InvalidInputError("not an ABNN checkpoint")
        version, count = struct.unpack_from("<II", data, 4)
        if version != 1:
            raise InvalidInputError(f"unsupported checkpoint version {version}")
        net = self.copy()
        params = net.parameters()
        if count != len(params):
            raise ShapeError(f"checkpoint has {count} arrays, net has {len(params)}")
        offset = 12
        for p in params:
            rows, cols = struct.unpack_from("<II", data, offset)
            offset += 8
            values = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset)
            offset += 8 * rows * cols
            if rows * cols != p.size:
                raise ShapeError("checkpoint array shape mismatch")
            p[...] = values.reshape(p.shape)
        return net


# ---------------------------------------------------------------------------
# losses and training
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Rows of one mini-batch.

    ``index`` holds positions in the full training set (for per-instance
    state); ``target`` carries regression targets; ``pairs`` is filled by
    losses that sample instance pairs.
    """

    X: np.ndarray
    y: np.ndarray
    index: np.ndarray
    target: np.ndarray | None = None
    pairs: np.ndarray | None = None


class Loss(Protocol):
    heads: tuple[str, ...]

    def prepare(self, batch: Batch, outputs: dict[str, np.ndarray], epoch: int, rng: np.random.Generator) -> None:
        ...

    def value_and_grad(self, outputs: dict[str, np.ndarray], batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
        ...


class CrossEntropy:
    """Mean negative log-likelihood of the predictive head."""

    heads = (PREDICTIVE,)

    def prepare(self, batch, outputs, epoch, rng):
        pass

    def value_and_grad(self, outputs, batch):
        value, grad = weighted_log_loss(outputs[PREDICTIVE], one_hot(batch.y, outputs[PREDICTIVE].shape[1]))
        return value, {PREDICTIVE: grad}


def one_hot(y: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(y), width))
    out[np.arange(len(y)), y] = 1.0
    return out


def weighted_log_loss(logits: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray]:
    """``-mean_i sum_j w_ij log max(p_ij, 1e-12)`` and its gradient w.r.t. logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    live = logp > LOG_EPS
    lp = np.where(live, logp, LOG_EPS)
    value = -float(np.sum(weights * lp)) / n
    w = weights * live
    p = np.exp(logp)
    grad = -(w - p * w.sum(axis=1, keepdims=True)) / n
    return value, grad


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    time_decay: bool = False

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidHyperparameterError(f"unknown optimizer {self.kind!r}")
        # zero is allowed so a run can be used as a fixed-point check
        if not self.learning_rate >= 0:
            raise InvalidHyperparameterError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidHyperparameterError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidHyperparameterError("weight_decay must be nonnegative")

    def lr_at(self, epoch: int) -> float:
        if self.time_decay:
            return self.learning_rate * 0.5 ** (epoch // 25)
        return self.learning_rate


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidHyperparameterError("epochs and batch_size must be >= 1")


class _Optimizer:
    def __init__(self, cfg: OptimizerConfig, params: list[np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        if cfg.kind == "sgd":
            for p, g, buf in zip(self.params, grads, self.m):
                if cfg.weight_decay:
                    g = g + cfg.weight_decay * p
                if cfg.momentum:
                    buf *= cfg.momentum
                    buf += g
                    g = g + cfg.momentum * buf if cfg.nesterov else buf
                p -= lr * g
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if cfg.weight_decay:
                p -= lr * cfg.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainResult:
    net: HeadedNet
    history: list[float] = field(default_factory=list)


def train(
    net: HeadedNet,
    data: Any,
    loss: Loss,
    opt: OptimizerConfig,
    cfg: TrainConfig,
    *,
    targets: np.ndarray | None = None,
    trainable: Sequence[str] | None = None,
) -> TrainResult:
    """Mini-batch training of a copy of ``net``.

    ``data`` needs ``X`` and ``y`` attributes. ``trainable`` restricts
    updates to the named parameter groups (``"body"`` or head names); other
    parameters stay bit-identical. The returned history holds the mean batch
    loss of every epoch.
    """
    net = net.copy()
    X = np.asarray(data.X, dtype=np.float64)
    y = np.asarray(data.y)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters(trainable)
    optimizer = _Optimizer(opt, params)
    history = []
    for epoch in range(cfg.epochs):
        lr = opt.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = Batch(X[idx], y[idx], idx, None if targets is None else targets[idx])
            with np.errstate(over="ignore", invalid="ignore"):
                outputs, cache = net.forward(batch.X, return_cache=True)
            if not all(np.all(np.isfinite(o)) for o in outputs.values()):
                raise TrainingDivergedError(epoch)
            loss.prepare(batch, outputs, epoch, rng)
            value, grad_out = loss.value_and_grad(outputs, batch)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch)
            grads = net.backward(cache, grad_out, trainable)
            optimizer.step(grads, lr)
            total += value * len(idx)
            count += len(idx)
        history.append(total / count)
    return TrainResult(net, history)


def grad_check(
    loss: Loss,
    net: HeadedNet,
    batch: Batch,
    h: float = 1e-5,
    *,
    trainable: Sequence[str] | None = None,
    epoch: int = 10**6,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss.prepare`` runs once before differencing so sampled pairs and
    adaptive targets stay fixed. Only parameters in ``trainable`` are
    perturbed. The error of an entry is
    ``|analytic - cd| / (|analytic| + |cd| + 1e-12)``.
    """
    if not 1e-7 <= h <= 1e-4:
        raise InvalidHyperparameterError("step must lie in [1e-7, 1e-4]")
    net = net.copy()
    outputs, cache = net.forward(batch.X, return_cache=True)
    loss.prepare(batch, outputs, epoch, np.random.default_rng(seed))
    _, grad_out = loss.value_and_grad(outputs, batch)
    analytic = net.backward(cache, grad_out, trainable)

    def value() -> float:
        return loss.value_and_grad(net.forward(batch.X), batch)[0]

    worst = 0.0
    for p, g in zip(net.parameters(trainable), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = value()
            flat[i] = old - h
            down = value()
            flat[i] = old
            cd = (up - down) / (2 * h)
            err = abs(gflat[i] - cd) / (abs(gflat[i]) + abs(cd) + 1e-12)
            worst = max(worst, err)
    return worst
