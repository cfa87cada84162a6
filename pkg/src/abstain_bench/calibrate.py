"""Threshold selection for the confidence function.

Two problem modes are covered: a coverage target (reject the lowest
``1 - c`` fraction of calibration confidences) and a selective-risk target
(largest coverage whose binomial upper bound on the error stays below ``r``).
Acceptance is always strict: an instance is accepted iff ``k(x) > tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import InvalidHyperparameterError, InvalidInputError

ACCEPT_ALL = -math.inf


@dataclass(frozen=True)
class Threshold:
    tau: float
    source: str
    coverage: float
    degenerate: bool = False

    def accept(self, confidences: np.ndarray) -> np.ndarray:
        return apply_threshold(confidences, self)


@dataclass(frozen=True)
class SgrResult:
    tau: float
    bound: float
    coverage: float
    r: float
    delta: float
    guaranteed: bool

    @property
    def threshold(self) -> Threshold:
        return Threshold(self.tau, f"sgr(r={self.r:g}, delta={self.delta:g})", self.coverage)


def apply_threshold(confidences: np.ndarray, threshold: Threshold | float) -> np.ndarray:
    tau = threshold.tau if isinstance(threshold, Threshold) else float(threshold)
    return np.asarray(confidences) > tau


def _rejected_count(n: int, c: float) -> int:
    # guard against (1 - 0.9) * 10 = 0.999...
    return int(math.floor((1.0 - c) * n + 1e-9))


def percentile_threshold(confidences, c: float) -> Threshold:
    """Threshold at the ``floor((1 - c) n)``-th smallest calibration confidence.

    With distinct confidences the calibration coverage lands in
    ``[c, c + 1/n)``. When ties at the cut push coverage more than ``1/n``
    below ``c``, the threshold moves down to the next smaller distinct
    value; if there is none the result is flagged ``degenerate``.
    """
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if conf.size == 0:
        raise InvalidInputError("cannot calibrate on an empty confidence vector")
    if not 0 < c <= 1:
        raise InvalidHyperparameterError("target coverage must lie in (0, 1]")
    n = conf.size
    k = _rejected_count(n, c)
    source = f"percentile(c={c:g})"
    if k == 0:
        return Threshold(ACCEPT_ALL, source, 1.0)
    ordered = np.sort(conf)
    tau = float(ordered[k - 1])
    coverage = float(np.mean(conf > tau))
    degenerate = False
    if coverage < c - 1.0 / n:
        below = ordered[ordered < tau]
        if below.size:
            tau = float(below[-1])
            coverage = float(np.mean(conf > tau))
        else:
            degenerate = True
    return Threshold(tau, source, coverage, degenerate)


def _binom_cdf(k, m, b):
    """P(Binomial(m, b) <= k) through the regularized incomplete beta."""
    k = np.asarray(k, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    full = k >= m
    safe_a = np.where(full, 1.0, m - k)
    out = betainc(safe_a, k + 1.0, 1.0 - b)
    return np.where(full, 1.0, out)


def _tail_inverse(errors, m, delta: float, tol: float = 1e-12) -> np.ndarray:
    errors = np.asarray(errors, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    lo = np.zeros(np.broadcast(errors, m).shape)
    hi = np.ones_like(lo)
    # cdf(b) is decreasing in b: keep hi feasible (cdf <= delta), lo infeasible
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        ok = _binom_cdf(errors, m, mid) <= delta
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return np.where(errors >= m, 1.0, hi)


def binomial_tail_inverse(r_hat: float, m: int, delta: float) -> float:
    """Smallest ``b`` with ``P(Binomial(m, b) <= m * r_hat) <= delta``.

    This is the one-sided ``1 - delta`` upper confidence bound on a true
    error rate after observing an empirical rate ``r_hat`` on ``m`` samples.
    """
    if not 0 < delta < 1:
        raise InvalidHyperparameterError("delta must lie in (0, 1)")
    if m < 1 or not 0 <= r_hat <= 1:
        raise InvalidInputError("need m >= 1 and r_hat in [0, 1]")
    errors = round(r_hat * m)
    return float(_tail_inverse(errors, m, delta))


def sgr_threshold(confidences, correct, r: float, delta: float = 0.001) -> SgrResult:
    """Selection with guaranteed risk.

    Every distinct confidence level defines a candidate accepted set (all
    instances at or above that level). The candidate with the largest
    coverage whose error bound is at most ``r`` wins. If no candidate
    qualifies, the most confident level is returned with
    ``guaranteed=False``.
    """
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    ok = np.asarray(correct, dtype=bool).reshape(-1)
    if conf.size == 0:
        raise InvalidInputError("sgr needs at least one calibration instance")
    if conf.shape != ok.shape:
        raise InvalidInputError("confidences and correctness flags must align")
    if not 0 < r:
        raise InvalidHyperparameterError("target risk must be positive")
    if not 0 < delta < 1:
        raise InvalidHyperparameterError("delta must lie in (0, 1)")
    n = conf.size
    order = np.argsort(-conf, kind="stable")
    sorted_conf = conf[order]
    cum_err = np.cumsum(~ok[order])
    # last position of each distinct level in descending order
    ends = np.flatnonzero(np.r_[sorted_conf[1:] != sorted_conf[:-1], True])
    accepted = ends + 1
    errors = cum_err[ends]
    bounds = _tail_inverse(errors, accepted, delta)
    taus = np.r_[sorted_conf[ends[1:]], ACCEPT_ALL]
    qualifying = np.flatnonzero(bounds <= r)
    if qualifying.size:
        j = qualifying[-1]
        guaranteed = True
    else:
        j = 0
        guaranteed = False
    return SgrResult(float(taus[j]), float(bounds[j]), float(accepted[j]) / n, r, delta, guaranteed)
