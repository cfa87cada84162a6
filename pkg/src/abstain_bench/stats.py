"""Bootstrap summaries and Friedman/Nemenyi rank statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import InvalidHyperparameterError, InvalidInputError

# Studentized range quantiles divided by sqrt(2) for infinite degrees of
# freedom (Demsar 2006, Table 5, extended to k = 20).
NEMENYI_Q = {
    0.05: {
        2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164,
        11: 3.219, 12: 3.268, 13: 3.313, 14: 3.354, 15: 3.391, 16: 3.426, 17: 3.458, 18: 3.489,
        19: 3.517, 20: 3.544,
    },
    0.10: {
        2: 1.645, 3: 2.052, 4: 2.291, 5: 2.459, 6: 2.589, 7: 2.693, 8: 2.780, 9: 2.855, 10: 2.920,
        11: 2.978, 12: 3.030, 13: 3.077, 14: 3.120, 15: 3.159, 16: 3.196, 17: 3.230, 18: 3.261,
        19: 3.291, 20: 3.319,
    },
}


def bootstrap_indices(n: int, B: int = 100, seed: int = 0) -> np.ndarray:
    """``B`` resamples (with replacement) of ``range(n)``, shape ``(B, n)``."""
    if n < 1:
        raise InvalidInputError("cannot bootstrap an empty set")
    if B < 1:
        raise InvalidInputError("need at least one bootstrap resample")
    return np.random.default_rng(seed).integers(0, n, size=(B, n))


def summarize(values) -> tuple[float, float]:
    """Mean and population standard deviation (divisor B)."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise InvalidInputError("cannot summarize an empty vector")
    return float(v.mean()), float(v.std())


def rank_row(values, lower_is_better: bool = True) -> np.ndarray:
    """Ranks 1..k with ties averaged. ``None``/NaN values share the worst ranks."""
    raw = [None if v is None else float(v) for v in values]
    k = len(raw)
    missing = np.array([v is None or math.isnan(v) for v in raw])
    score = np.array([0.0 if bad else v for v, bad in zip(raw, missing)])
    if not lower_is_better:
        score = -score
    ranks = np.empty(k)
    present = np.flatnonzero(~missing)
    if present.size:
        ranks[present] = sps.rankdata(score[present], method="average")
    if missing.any():
        first = present.size + 1
        ranks[missing] = (first + k) / 2.0
    return ranks


@dataclass(frozen=True)
class FriedmanResult:
    chi2: float
    iman_davenport: float
    p_value: float
    n_trials: int
    n_methods: int


def friedman(rank_matrix) -> FriedmanResult:
    """Friedman chi-square and the Iman-Davenport F correction.

    The p-value comes from F(k - 1, (k - 1)(N - 1)).
    """
    R = np.asarray(rank_matrix, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 2 or R.shape[1] < 2:
        raise InvalidInputError("need at least 2 trials and 2 methods")
    N, k = R.shape
    mean_ranks = R.mean(axis=0)
    chi2 = 12.0 * N / (k * (k + 1)) * (np.sum(mean_ranks**2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    denom = N * (k - 1) - chi2
    if denom <= 1e-12:
        return FriedmanResult(chi2, math.inf, 0.0, N, k)
    ff = (N - 1) * chi2 / denom
    p = float(sps.f.sf(ff, k - 1, (k - 1) * (N - 1)))
    return FriedmanResult(float(chi2), float(ff), p, N, k)


def nemenyi_cd(k: int, N: int, alpha: float = 0.05) -> float:
    table = NEMENYI_Q.get(alpha)
    if table is None:
        raise InvalidHyperparameterError(f"no Nemenyi table for alpha={alpha}")
    if k not in table:
        raise InvalidHyperparameterError(f"k={k} outside the tabulated range 2..20")
    if N < 1:
        raise InvalidInputError("N must be positive")
    return table[k] * math.sqrt(k * (k + 1) / (6.0 * N))


def cd_groups(mean_ranks, cd: float) -> list[list[int]]:
    """Maximal runs of methods (sorted by mean rank) spanning at most ``cd``.

    Returns lists of positions into ``mean_ranks``.
    """
    r = np.asarray(mean_ranks, dtype=np.float64)
    order = np.argsort(r, kind="stable")
    s = r[order]
    groups = []
    last_end = -1
    for i in range(len(s)):
        j = i
        while j + 1 < len(s) and s[j + 1] - s[i] <= cd + 1e-12:
            j += 1
        if j > last_end:
            groups.append([int(x) for x in order[i : j + 1]])
            last_end = j
    return groups


@dataclass
class RankTable:
    methods: list[str]
    ranks: np.ndarray
    friedman: FriedmanResult | None
    cd: float | None
    alpha: float = 0.05

    @property
    def mean_ranks(self) -> np.ndarray:
        return self.ranks.mean(axis=0)

    @property
    def groups(self) -> list[list[str]]:
        if self.cd is None:
            return [list(self.methods)]
        return [[self.methods[i] for i in g] for g in cd_groups(self.mean_ranks, self.cd)]

    def to_json(self) -> dict:
        fr = self.friedman
        return {
            "methods": list(self.methods),
            "mean_ranks": [float(x) for x in self.mean_ranks],
            "n_trials": int(self.ranks.shape[0]),
            "friedman_chi2": None if fr is None else fr.chi2,
            "iman_davenport_f": None if fr is None or math.isinf(fr.iman_davenport) else fr.iman_davenport,
            "p_value": None if fr is None else fr.p_value,
            "alpha": self.alpha,
            "critical_difference": self.cd,
            "groups": self.groups,
        }


def rank_table(methods, metric_rows, lower_is_better: bool = True, alpha: float = 0.05) -> RankTable:
    """Rank every row of a trials x methods metric matrix and test for differences."""
    methods = list(methods)
    ranks = np.array([rank_row(row, lower_is_better) for row in metric_rows], dtype=np.float64)
    if ranks.size == 0:
        raise InvalidInputError("no trials to rank")
    k = len(methods)
    N = ranks.shape[0]
    fr = friedman(ranks) if N >= 2 and k >= 2 else None
    cd = nemenyi_cd(k, N, alpha) if 2 <= k <= 20 else None
    return RankTable(methods, ranks, fr, cd, alpha)
