"""Dataset ingestion, splitting, standardization and synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CsvParseError, DatasetTooSmallError, InvalidInputError, ShapeError, SingleClassError

SPLIT_FRACTIONS = (0.6, 0.1, 0.1, 0.2)


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    m: int
    name: str = ""
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ShapeError("X must be (n, d) with one label per row")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.m):
            raise InvalidInputError("labels must lie in [0, m)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.m)

    @property
    def p(self) -> float | None:
        """Minority prior (binary tasks only)."""
        if self.m != 2 or self.n == 0:
            return None
        return float(self.class_counts().min()) / self.n

    @property
    def minority_class(self) -> int:
        """Least frequent class; the larger id wins ties."""
        counts = self.class_counts()
        return int(np.flatnonzero(counts == counts.min())[-1])

    @property
    def majority_class(self) -> int:
        """Most frequent class; the smaller id wins ties."""
        return int(np.argmax(self.class_counts()))

    def subset(self, index: np.ndarray, name: str | None = None) -> "LabeledDataset":
        return replace(self, X=self.X[index], y=self.y[index], name=self.name if name is None else name)


@dataclass(frozen=True)
class SplitBundle:
    train: LabeledDataset
    calibration: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    indices: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def load_csv(path: str | Path, label_column: int | str = -1, has_header: bool = True) -> LabeledDataset:
    """Read a numeric CSV whose label column may hold arbitrary tokens.

    Labels are re-encoded to ``0..m-1`` in order of first appearance.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    header = None
    if has_header:
        header, rows = rows[0], rows[1:]
    if not rows:
        raise InvalidInputError(f"{path} contains no data rows")
    width = len(rows[0])
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise InvalidInputError(f"label column {label_column!r} not found")
        label_idx = header.index(label_column)
    else:
        label_idx = label_column % width

    codes: dict[str, int] = {}
    features = []
    y = []
    first_line = 2 if has_header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise InvalidInputError(f"row {r + first_line} has {len(row)} fields, expected {width}")
        label = row[label_idx].strip()
        y.append(codes.setdefault(label, len(codes)))
        values = []
        for c, cell in enumerate(row):
            if c == label_idx:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                column = header[c] if header else c
                raise CsvParseError(r + first_line, column, cell) from None
        features.append(values)
    if len(codes) < 2:
        raise SingleClassError(f"{path} has a single class")
    return LabeledDataset(
        np.asarray(features, dtype=np.float64),
        np.asarray(y, dtype=np.int64),
        len(codes),
        name=path.stem,
        labels=tuple(codes),
    )


def split_sizes(n: int) -> tuple[int, int, int, int]:
    cal = int(np.floor(n * SPLIT_FRACTIONS[1] + 1e-9))
    val = int(np.floor(n * SPLIT_FRACTIONS[2] + 1e-9))
    test = int(np.floor(n * SPLIT_FRACTIONS[3] + 1e-9))
    return n - cal - val - test, cal, val, test


def _stratified_order(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random order in which every class is spread evenly along the sequence.

    Rows of class ``j`` are shuffled and given positions ``(i + u) / n_j``
    with one shared random offset ``u`` per class; sorting by position
    interleaves the classes, so any contiguous cut keeps class shares
    within one row of the overall priors.
    """
    keys = np.empty(len(y))
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        keys[members] = (np.arange(len(members)) + rng.uniform()) / len(members)
    tiebreak = rng.permutation(len(y))
    return np.lexsort((tiebreak, keys))


def split(dataset: LabeledDataset, seed: int, stratify: bool = True) -> SplitBundle:
    """Shuffle and cut into train/calibration/validation/test (60/10/10/20).

    Fractional rows are floored for the three small parts; the remainder
    goes to training. With ``stratify`` each part keeps the class shares of
    the whole dataset (up to rounding).
    """
    n = dataset.n
    if n < 10:
        raise DatasetTooSmallError(f"need at least 10 rows to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = _stratified_order(dataset.y, rng) if stratify else rng.permutation(n)
    sizes = split_sizes(n)
    cuts = np.cumsum(sizes)[:-1]
    parts = tuple(np.sort(p) for p in np.split(perm, cuts))
    names = ("train", "calibration", "validation", "test")
    subsets = [dataset.subset(idx, f"{dataset.name}:{nm}") for idx, nm in zip(parts, names)]
    return SplitBundle(*subsets, indices=parts)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, dataset: LabeledDataset) -> LabeledDataset:
        return replace(dataset, X=self.transform(dataset.X))

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.shape[0]:
            raise ShapeError(f"expected {self.mean.shape[0]} features, got {X.shape}")
        return (X - self.mean) / self.scale

    def inverse(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) * self.scale + self.mean


def standardize_fit(train: LabeledDataset) -> Standardizer:
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    # zero-variance columns are only centred
    scale = np.where(std > 0, std, 1.0)
    return Standardizer(mean, scale)


def standardize_apply(std: Standardizer, dataset: LabeledDataset) -> LabeledDataset:
    return std.apply(dataset)


def _class_counts(n: int, priors: np.ndarray) -> np.ndarray:
    raw = priors * n
    counts = np.floor(raw).astype(np.int64)
    # largest remainder, ties to the lower class id
    leftover = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def synth_gaussian(
    n: int,
    d: int,
    class_priors,
    mean_separation: float,
    seed: int,
    name: str = "synth",
) -> LabeledDataset:
    """Isotropic unit Gaussians; class j is centred at ``mean_separation * e_(j mod d)``.

    Class counts are the priors times ``n`` rounded by largest remainder, so
    the minority prior is exact up to one row.
    """
    priors = np.asarray(class_priors, dtype=np.float64)
    if priors.ndim != 1 or len(priors) < 2 or np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise InvalidInputError("class priors must be nonnegative and sum to 1")
    if d < 1 or n < 1:
        raise InvalidInputError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    counts = _class_counts(n, priors)
    y = np.repeat(np.arange(len(priors)), counts)
    y = y[rng.permutation(n)]
    means = np.zeros((len(priors), d))
    means[np.arange(len(priors)), np.arange(len(priors)) % d] = mean_separation
    X = means[y] + rng.standard_normal((n, d))
    return LabeledDataset(X, y.astype(np.int64), len(priors), name=name)


def ood_uniform(reference: LabeledDataset | np.ndarray, n: int, seed: int) -> np.ndarray:
    """Unlabeled rows drawn uniformly inside the per-feature range of ``reference``."""
    X = reference.X if isinstance(reference, LabeledDataset) else np.asarray(reference)
    if X.shape[0] == 0:
        raise InvalidInputError("reference must be nonempty")
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    return np.random.default_rng(seed).uniform(lo, hi, size=(n, X.shape[1]))
