"""Evaluation quantities for selective classifiers.

Quantities that are undefined on a given accepted set (no accepted rows,
zero majority error) are reported as ``None`` rather than NaN. The CSV
writer renders them as ``NA``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidHyperparameterError, InvalidInputError

TOLERANCES = (0.0, 0.01, 0.02, 0.05, 0.10)
NA = "NA"


def _flags(accept) -> np.ndarray:
    return np.asarray(accept, dtype=bool).reshape(-1)


def empirical_coverage(accept) -> float:
    g = _flags(accept)
    if g.size == 0:
        raise InvalidInputError("coverage of an empty test set is undefined")
    return float(g.mean())


def selective_error(predictions, labels, accept) -> float | None:
    """Misclassification rate over accepted rows; ``None`` when nothing is accepted."""
    g = _flags(accept)
    pred = np.asarray(predictions).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if not (pred.shape == y.shape == g.shape):
        raise InvalidInputError("predictions, labels and flags must align")
    if not g.any():
        return None
    return float(np.mean(pred[g] != y[g]))


def majority_selective_error(majority_class: int, labels, accept) -> float | None:
    y = np.asarray(labels).reshape(-1)
    return selective_error(np.full(y.shape, majority_class), y, accept)


def rel_err(err: float | None, err_majority: float | None) -> float | None:
    if err is None or err_majority is None or err_majority == 0:
        return None
    return err / err_majority


def con_sat(coverage: float, c: float, eps: float) -> int:
    """1 when the empirical coverage is at least ``c - eps``.

    The tolerance is compared on a rounded difference so that e.g.
    ``0.68 >= 0.7 - 0.02`` holds despite binary floating point.
    """
    if eps < 0:
        raise InvalidHyperparameterError("tolerance must be nonnegative")
    return int(round(coverage - c + eps, 12) >= 0)


def min_coeff(accepted_labels, minority_class: int, prior: float) -> float | None:
    """Minority share among accepted rows divided by the minority prior."""
    y = np.asarray(accepted_labels).reshape(-1)
    if y.size == 0:
        return None
    if not prior > 0:
        raise InvalidInputError("minority prior must be positive")
    return float(np.mean(y == minority_class)) / prior


def err_coeff(r_hat: float | None, r: float) -> float | None:
    if not r > 0:
        raise InvalidHyperparameterError("target error must be positive")
    if r_hat is None:
        return None
    return r_hat / r


def risk_coverage_curve(confidences, correct) -> list[tuple[float, float]]:
    """(coverage, selective error) at every distinct confidence level, most confident first."""
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    ok = np.asarray(correct, dtype=bool).reshape(-1)
    if conf.size == 0:
        raise InvalidInputError("risk-coverage curve of empty input")
    if conf.shape != ok.shape:
        raise InvalidInputError("confidences and correctness must align")
    order = np.argsort(-conf, kind="stable")
    c_sorted = conf[order]
    cum_err = np.cumsum(~ok[order])
    ends = np.flatnonzero(np.r_[c_sorted[1:] != c_sorted[:-1], True])
    n = conf.size
    return [(float(e + 1) / n, float(cum_err[e]) / (e + 1)) for e in ends]


@dataclass
class EvalRecord:
    """One (method, dataset, coverage, bootstrap) evaluation row."""

    method: str
    dataset: str
    c: float | None
    err: float | None
    coverage: float | None
    rel_err: float | None
    consat: tuple[int, ...] | None
    min_coeff: float | None
    err_coeff: float | None
    seed: int
    bootstrap: int | None
    r: float | None = None
    status: str = "ok"

    COLUMNS = (
        "method",
        "dataset",
        "c",
        "err",
        "coverage",
        "rel_err",
        *(f"consat_{round(e * 100):03d}" for e in TOLERANCES),
        "min_coeff",
        "err_coeff",
        "seed",
        "bootstrap",
        "r",
        "status",
    )

    def to_row(self) -> list[str]:
        consat = self.consat if self.consat is not None else (None,) * len(TOLERANCES)
        cells = [
            self.method,
            self.dataset,
            self.c,
            self.err,
            self.coverage,
            self.rel_err,
            *consat,
            self.min_coeff,
            self.err_coeff,
            self.seed,
            self.bootstrap,
            self.r,
            self.status,
        ]
        return [_fmt(v) for v in cells]


def _fmt(value) -> str:
    if value is None:
        return NA
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def parse_cell(text: str) -> float | None:
    return None if text == NA or text == "" else float(text)


def evaluate(
    predictions,
    labels,
    accept,
    *,
    method: str,
    dataset: str,
    c: float | None,
    majority_class: int,
    minority_class: int | None,
    prior: float | None,
    seed: int,
    bootstrap: int | None,
    tolerances=TOLERANCES,
) -> EvalRecord:
    """Compute every bounded-abstention metric for one accepted set."""
    labels = np.asarray(labels)
    g = _flags(accept)
    err = selective_error(predictions, labels, g)
    cov = empirical_coverage(g)
    rel = rel_err(err, majority_selective_error(majority_class, labels, g))
    sat = tuple(con_sat(cov, c, e) for e in tolerances) if c is not None else None
    mc = None
    if minority_class is not None and prior:
        mc = min_coeff(labels[g], minority_class, prior)
    return EvalRecord(method, dataset, c, err, cov, rel, sat, mc, None, seed, bootstrap)
