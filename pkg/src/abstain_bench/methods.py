"""The eighteen selective-classification baselines.

Each fitting routine returns an uncalibrated :class:`SelectiveModel`; a
model turns inputs into predictions plus a confidence vector (or, for the
band methods, a minority-class score). Calibration then fixes either a
threshold ``tau`` (accept iff confidence > tau) or a rejection band
``(l, u)`` (abstain iff l < score < u).

"+SR" variants reuse the trained networks of their base method and only
swap the confidence function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import calibrate as cal
from .data import LabeledDataset, _stratified_order
from .errors import (
    InvalidHyperparameterError,
    InvalidInputError,
    UncalibratedModelError,
    UnsupportedTaskError,
)
from .losses import DGLoss, SATLoss, SELELoss, SelNetLoss, SquaredErrorLoss
from .nn import (
    AUXILIARY,
    PREDICTIVE,
    SELECTIVE,
    UNCERTAINTY,
    CrossEntropy,
    HeadedNet,
    HeadSpec,
    MlpSpec,
    OptimizerConfig,
    TrainConfig,
    predictive_head,
    train,
    uncertainty_head,
)
from .seeding import derive_seed

ABSTAIN = -1

METHODS = (
    "dg",
    "sat",
    "sat_em",
    "selnet",
    "selnet_em",
    "sr",
    "sat_sr",
    "sat_em_sr",
    "selnet_sr",
    "selnet_em_sr",
    "ens",
    "ens_sr",
    "confidnet",
    "reg",
    "sele",
    "scross",
    "pluginauc",
    "aucross",
)

# methods sharing one training run
FAMILY = {
    "sr": "ce",
    "pluginauc": "ce",
    "confidnet": "ce",
    "dg": "dg",
    "sat": "sat",
    "sat_sr": "sat",
    "sat_em": "sat_em",
    "sat_em_sr": "sat_em",
    "selnet": "selnet",
    "selnet_sr": "selnet",
    "selnet_em": "selnet_em",
    "selnet_em_sr": "selnet_em",
    "ens": "ens",
    "ens_sr": "ens",
    "reg": "reg",
    "sele": "sele",
    "scross": "xfit",
    "aucross": "xfit",
}

BAND_METHODS = frozenset({"pluginauc", "aucross"})
COVERAGE_TRAINED = frozenset({"selnet", "selnet_sr", "selnet_em", "selnet_em_sr"})
CROSS_FITTED = frozenset({"scross", "aucross"})

# confidence kinds
SR = "SR"
ABSTAIN_COMPLEMENT = "AbstainComplement"
SELECTIVE_HEAD = "SelectiveHead"
ENS_ENTROPY = "EnsEntropy"
ENS_AVG_SR = "EnsAvgSR"
CONFIDNET = "ConfidNet"
UNCERTAINTY_COMPLEMENT = "UncertaintyComplement"
AUC_BAND = "AucBand"


@dataclass(frozen=True)
class MethodConfig:
    """Hyperparameters shared by all baselines.

    ``o=None`` resolves to ``(1 + m) / 2``. ``unc_*`` fields configure the
    uncertainty networks of ConfidNet, REG and SELE.
    """

    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    optimizer: OptimizerConfig = OptimizerConfig()
    epochs: int = 300
    batch_size: int = 128
    o: float | None = None
    gamma: float = 0.95
    warmup: int = 30
    beta: float = 1e-3
    alpha: float = 0.5
    lam: float = 32.0
    ensemble_size: int = 10
    folds: int = 5
    pair_budget: int | None = None
    unc_hidden: tuple[int, ...] = (64, 32, 16)
    unc_optimizer: OptimizerConfig = OptimizerConfig()
    unc_epochs: int | None = None

    def train_config(self, seed: int, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(epochs or self.epochs, self.batch_size, seed)

    def reward(self, m: int) -> float:
        return self.o if self.o is not None else (1.0 + m) / 2.0


# ---------------------------------------------------------------------------
# confidence functions
# ---------------------------------------------------------------------------


def sr_confidence(probs: np.ndarray, n_classes: int | None = None) -> np.ndarray:
    """Maximum class probability; with an extra abstention column only the first ``n_classes`` count."""
    p = np.asarray(probs, dtype=np.float64)
    m = p.shape[1] if n_classes is None else n_classes
    return p[:, :m].max(axis=1)


def abstain_confidence(probs: np.ndarray) -> np.ndarray:
    return 1.0 - np.asarray(probs, dtype=np.float64)[:, -1]


def ens_confidence(member_probs, mode: str = "entropy") -> np.ndarray:
    """Ensemble confidence.

    ``entropy``: ``1 - H(mean probs) / ln m``. ``avg_sr``: mean of member maxima.
    """
    stack = np.asarray(member_probs, dtype=np.float64)
    if stack.ndim != 3:
        raise InvalidInputError("expected a (J, n, m) stack of probability rows")
    m = stack.shape[2]
    if m < 2:
        raise InvalidInputError("ensemble confidence needs at least two classes")
    if mode == "entropy":
        mean = stack.mean(axis=0)
        plogp = np.where(mean > 0, mean * np.log(np.where(mean > 0, mean, 1.0)), 0.0)
        return 1.0 + plogp.sum(axis=1) / math.log(m)
    if mode == "avg_sr":
        return stack.max(axis=2).mean(axis=0)
    raise InvalidHyperparameterError(f"unknown ensemble mode {mode!r}")


def pluginauc_band(scores, prior: float, c: float) -> tuple[float, float]:
    """Rejection band over minority-class scores holding a ``1 - c`` share of ``scores``.

    The band straddles the score rank ``1 - prior``: ``(1 - c)(1 - prior)``
    of the mass is taken below it and ``(1 - c) prior`` above it, so a good
    ranker rejects both classes in proportion to their priors. The band is
    shifted back inside the score range when it would overflow an end.
    Bounds are exclusive; ``-inf``/``inf`` mean the band is open on that side.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
    n = s.size
    if n == 0:
        raise InvalidInputError("band calibration needs scores")
    if not 0 < c <= 1:
        raise InvalidHyperparameterError("target coverage must lie in (0, 1]")
    if not 0 < prior < 1:
        raise InvalidHyperparameterError("minority prior must lie in (0, 1)")
    n_rej = cal._rejected_count(n, c)
    pivot = int(round((1.0 - prior) * n))
    below = int(round(n_rej * (1.0 - prior)))
    lo = min(max(pivot - below, 0), n - n_rej)
    if n_rej == 0:
        edge = s[min(max(pivot, 0), n - 1)]
        return float(edge), float(edge)
    lower = -math.inf if lo == 0 else float(s[lo - 1])
    upper = math.inf if lo + n_rej >= n else float(s[lo + n_rej])
    return lower, upper


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


@dataclass
class SelectiveModel:
    method: str
    kind: str
    nets: tuple[HeadedNet, ...]
    m: int
    uncertainty_net: HeadedNet | None = None
    minority: int | None = None
    prior: float | None = None
    threshold: cal.Threshold | None = None
    band: tuple[float, float] | None = None
    c: float | None = None
    seed: int | None = None
    # cross-fitted (scores, correctness) over the whole training pool
    oof: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def is_band(self) -> bool:
        return self.kind == AUC_BAND

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None or self.band is not None

    def with_kind(self, method: str, kind: str) -> "SelectiveModel":
        return replace(self, method=method, kind=kind, threshold=None, band=None)

    def member_probs(self, X: np.ndarray) -> list[np.ndarray]:
        return [net.predict(X)[PREDICTIVE] for net in self.nets]

    def class_probs(self, X: np.ndarray) -> np.ndarray:
        probs = self.member_probs(X)
        return np.mean([p[:, : self.m] for p in probs], axis=0)

    def score(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predicted classes and the confidence (or band score) of every row."""
        members = self.member_probs(X)
        class_probs = np.mean([p[:, : self.m] for p in members], axis=0)
        pred = class_probs.argmax(axis=1)
        kind = self.kind
        if kind == SR:
            conf = sr_confidence(class_probs)
        elif kind == ABSTAIN_COMPLEMENT:
            conf = abstain_confidence(members[0])
        elif kind == SELECTIVE_HEAD:
            conf = self.nets[0].predict(X)[SELECTIVE]
        elif kind == ENS_ENTROPY:
            conf = ens_confidence(members, "entropy")
        elif kind == ENS_AVG_SR:
            conf = ens_confidence(members, "avg_sr")
        elif kind == CONFIDNET:
            conf = self.nets[0].predict(X)[UNCERTAINTY]
        elif kind == UNCERTAINTY_COMPLEMENT:
            conf = 1.0 - self.uncertainty_net.predict(X)[UNCERTAINTY]
        elif kind == AUC_BAND:
            conf = class_probs[:, self.minority]
        else:
            raise InvalidInputError(f"unknown confidence kind {kind!r}")
        return pred, conf

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.class_probs(X).argmax(axis=1)

    def confidence(self, X: np.ndarray) -> np.ndarray:
        return self.score(X)[1]

    def accept_scores(self, scores: np.ndarray) -> np.ndarray:
        if self.band is not None:
            lo, hi = self.band
            return ~((scores > lo) & (scores < hi))
        if self.threshold is not None:
            return cal.apply_threshold(scores, self.threshold)
        raise UncalibratedModelError(f"{self.method} has not been calibrated")

    def accept(self, X: np.ndarray) -> np.ndarray:
        return self.accept_scores(self.confidence(X))

    def selective_predict(self, X: np.ndarray) -> np.ndarray:
        """Predicted class per row, or ``ABSTAIN`` (-1)."""
        pred, scores = self.score(X)
        return np.where(self.accept_scores(scores), pred, ABSTAIN)

    def calibrate(self, X_cal: np.ndarray | None, c: float, scores: np.ndarray | None = None) -> "SelectiveModel":
        """Fix the threshold or band for coverage ``c``.

        Cross-fitted models use their stacked out-of-fold scores and ignore
        ``X_cal``. Precomputed calibration ``scores`` may be passed instead.
        """
        if scores is None:
            scores = self.oof[0] if self.oof is not None else self.confidence(X_cal)
        if self.is_band:
            return replace(self, band=pluginauc_band(scores, self.prior, c), threshold=None, c=c)
        return replace(self, threshold=cal.percentile_threshold(scores, c), band=None, c=c)

    def parameter_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for net in self.nets:
            h.update(net.flat_parameters().tobytes())
        if self.uncertainty_net is not None:
            h.update(self.uncertainty_net.flat_parameters().tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# training helpers
# ---------------------------------------------------------------------------


def _spec(data: LabeledDataset, cfg: MethodConfig, *heads: HeadSpec) -> MlpSpec:
    return MlpSpec(data.d, tuple(cfg.hidden), cfg.activation, tuple(heads))


def _fit(data, cfg, seed, loss, *heads, targets=None):
    net = HeadedNet.build(_spec(data, cfg, *heads), derive_seed(seed, "init"))
    return train(net, data, loss, cfg.optimizer, cfg.train_config(derive_seed(seed, "order")), targets=targets).net


def fit_ce_net(data: LabeledDataset, cfg: MethodConfig, seed: int) -> HeadedNet:
    return _fit(data, cfg, seed, CrossEntropy(), predictive_head(data.m))


def _binary_meta(data: LabeledDataset) -> tuple[int | None, float | None]:
    if data.m != 2:
        return None, None
    return data.minority_class, data.p


def fit_sr(data: LabeledDataset, cfg: MethodConfig, seed: int, method: str = "sr") -> SelectiveModel:
    minority, prior = _binary_meta(data)
    return SelectiveModel(method, SR, (fit_ce_net(data, cfg, seed),), data.m, minority=minority, prior=prior, seed=seed)


def fit_dg(data: LabeledDataset, cfg: MethodConfig, seed: int) -> SelectiveModel:
    net = _fit(data, cfg, seed, DGLoss(cfg.reward(data.m)), predictive_head(data.m + 1))
    return SelectiveModel("dg", ABSTAIN_COMPLEMENT, (net,), data.m, seed=seed)


def fit_sat(data: LabeledDataset, cfg: MethodConfig, seed: int, entropy: bool = False) -> SelectiveModel:
    loss = SATLoss(cfg.gamma, cfg.warmup, data.y, data.m, beta=cfg.beta if entropy else 0.0)
    net = _fit(data, cfg, seed, loss, predictive_head(data.m + 1))
    return SelectiveModel("sat_em" if entropy else "sat", ABSTAIN_COMPLEMENT, (net,), data.m, seed=seed)


def fit_selnet(data: LabeledDataset, cfg: MethodConfig, seed: int, c: float, entropy: bool = False) -> SelectiveModel:
    loss = SelNetLoss(c, cfg.alpha, cfg.lam, cfg.beta if entropy else 0.0)
    heads = (
        predictive_head(data.m),
        HeadSpec(SELECTIVE, "sigmoid", 1),
        HeadSpec(AUXILIARY, "softmax", data.m),
    )
    net = _fit(data, cfg, seed, loss, *heads)
    return SelectiveModel("selnet_em" if entropy else "selnet", SELECTIVE_HEAD, (net,), data.m, c=c, seed=seed)


def ens_fit(
    data: LabeledDataset,
    cfg: MethodConfig,
    seed: int,
    *,
    size: int | None = None,
    member_seeds=None,
    mode: str = "entropy",
) -> SelectiveModel:
    """Train ``size`` cross-entropy networks from distinct seeds."""
    if member_seeds is None:
        J = size or cfg.ensemble_size
        member_seeds = [derive_seed(seed, "member", j) for j in range(J)]
    if len(member_seeds) < 2:
        raise InvalidHyperparameterError("an ensemble needs at least two members")
    nets = tuple(fit_ce_net(data, cfg, s) for s in member_seeds)
    kind = ENS_ENTROPY if mode == "entropy" else ENS_AVG_SR
    return SelectiveModel("ens" if mode == "entropy" else "ens_sr", kind, nets, data.m, seed=seed)


def confidnet_fit(base: SelectiveModel | HeadedNet, data: LabeledDataset, cfg: MethodConfig, seed: int) -> SelectiveModel:
    """Attach and train an uncertainty head regressing the true-class probability.

    The body and predictive head stay frozen.
    """
    net = base.nets[0] if isinstance(base, SelectiveModel) else base
    target = net.predict(data.X)[PREDICTIVE][np.arange(data.n), data.y]
    net = net.add_head(uncertainty_head(cfg.unc_hidden), derive_seed(seed, "confidnet-init"))
    result = train(
        net,
        data,
        SquaredErrorLoss(UNCERTAINTY),
        cfg.unc_optimizer,
        cfg.train_config(derive_seed(seed, "confidnet-order"), cfg.unc_epochs),
        targets=target,
        trainable=(UNCERTAINTY,),
    )
    return SelectiveModel("confidnet", CONFIDNET, (result.net,), data.m, seed=seed)


def half_split(data: LabeledDataset, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if data.n < 2:
        raise InvalidInputError("half-split needs at least two rows")
    perm = np.random.default_rng(seed).permutation(data.n)
    half = data.n // 2
    return data.subset(np.sort(perm[:half])), data.subset(np.sort(perm[half:]))


def _uncertainty_fit(data, cfg, seed, method, loss) -> SelectiveModel:
    first, second = half_split(data, derive_seed(seed, "halves"))
    clf = fit_ce_net(first, cfg, derive_seed(seed, "classifier"))
    mistakes = (clf.predict(second.X)[PREDICTIVE].argmax(axis=1) != second.y).astype(np.float64)
    spec = MlpSpec(data.d, tuple(cfg.hidden), cfg.activation, (uncertainty_head(cfg.unc_hidden),))
    unc = HeadedNet.build(spec, derive_seed(seed, "uncertainty-init"))
    unc = train(
        unc,
        second,
        loss,
        cfg.unc_optimizer,
        cfg.train_config(derive_seed(seed, "uncertainty-order"), cfg.unc_epochs),
        targets=mistakes,
    ).net
    return SelectiveModel(method, UNCERTAINTY_COMPLEMENT, (clf,), data.m, uncertainty_net=unc, seed=seed)


def reg_fit(data: LabeledDataset, cfg: MethodConfig, seed: int) -> SelectiveModel:
    """Classifier on one half, squared-error regression of its 0-1 loss on the other."""
    return _uncertainty_fit(data, cfg, seed, "reg", SquaredErrorLoss(UNCERTAINTY))


def sele_fit(data: LabeledDataset, cfg: MethodConfig, seed: int, pair_budget: int | None = None) -> SelectiveModel:
    """Classifier on one half, pairwise ranking of its 0-1 loss on the other."""
    return _uncertainty_fit(data, cfg, seed, "sele", SELELoss(pair_budget or cfg.pair_budget))


# ---------------------------------------------------------------------------
# cross-fitting and band methods
# ---------------------------------------------------------------------------


@dataclass
class CrossFit:
    """K out-of-fold CE networks plus one network trained on the whole pool."""

    final: HeadedNet
    oof_probs: np.ndarray
    y: np.ndarray
    m: int
    minority: int | None
    prior: float | None
    seed: int

    def scross(self, c: float | None = None) -> SelectiveModel:
        conf = sr_confidence(self.oof_probs)
        correct = self.oof_probs.argmax(axis=1) == self.y
        model = SelectiveModel("scross", SR, (self.final,), self.m, seed=self.seed, oof=(conf, correct))
        return model if c is None else model.calibrate(None, c)

    def aucross(self, c: float | None = None) -> SelectiveModel:
        if self.m != 2:
            raise UnsupportedTaskError("aucross supports binary tasks only")
        scores = self.oof_probs[:, self.minority]
        correct = self.oof_probs.argmax(axis=1) == self.y
        model = SelectiveModel(
            "aucross", AUC_BAND, (self.final,), self.m, minority=self.minority, prior=self.prior,
            seed=self.seed, oof=(scores, correct),
        )
        return model if c is None else model.calibrate(None, c)


def crossfit(pool: LabeledDataset, cfg: MethodConfig, seed: int, folds: int | None = None) -> CrossFit:
    K = folds or cfg.folds
    if K < 2:
        raise InvalidHyperparameterError("cross-fitting needs K >= 2")
    if pool.n < K:
        raise InvalidInputError(f"pool of {pool.n} rows cannot be cut into {K} folds")
    perm = _stratified_order(pool.y, np.random.default_rng(derive_seed(seed, "folds")))
    oof = np.zeros((pool.n, pool.m))
    for k, held in enumerate(np.array_split(perm, K)):
        fit_idx = np.setdiff1d(perm, held)
        net = fit_ce_net(pool.subset(fit_idx), cfg, derive_seed(seed, "fold", k))
        oof[held] = net.predict(pool.X[held])[PREDICTIVE]
    final = fit_ce_net(pool, cfg, derive_seed(seed, "final"))
    minority, prior = _binary_meta(pool)
    return CrossFit(final, oof, pool.y.copy(), pool.m, minority, prior, seed)


def scross_fit(pool: LabeledDataset, cfg: MethodConfig, seed: int, c: float, folds: int | None = None) -> SelectiveModel:
    return crossfit(pool, cfg, seed, folds).scross(c)


def aucross_fit(pool: LabeledDataset, cfg: MethodConfig, seed: int, c: float, folds: int | None = None) -> SelectiveModel:
    if pool.m != 2:
        raise UnsupportedTaskError("aucross supports binary tasks only")
    return crossfit(pool, cfg, seed, folds).aucross(c)


def pluginauc_fit(scorer: SelectiveModel, X_cal: np.ndarray, c: float) -> SelectiveModel:
    """Band model from a trained binary scorer, calibrated on held-out rows."""
    if scorer.m != 2 or scorer.minority is None:
        raise UnsupportedTaskError("pluginauc supports binary tasks only")
    band_model = scorer.with_kind("pluginauc", AUC_BAND)
    return band_model.calibrate(X_cal, c)


def selective_predict(model: SelectiveModel, X: np.ndarray) -> np.ndarray:
    return model.selective_predict(X)
