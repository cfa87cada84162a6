"""Benchmark configuration: a YAML key tree validated into :class:`BenchmarkConfig`.

Recognised keys::

    seed: 0
    mode: bounded_abstention        # or sgr, ood
    out: results
    jobs: 1
    methods: [sr, dg, ...]
    coverages: [0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99]
    bootstrap: 100
    tolerances: [0, 0.01, 0.02, 0.05, 0.1]
    sgr: {fractions: [0.1, 0.2, 0.5, 1.0], delta: 0.001}
    ood: {n: null}                  # default: size of the test split
    datasets:
      - {name: blobs, synthetic: {n: 5000, d: 2, priors: [0.5, 0.5], separation: 3}}
      - {name: adult, csv: data/adult.csv, label_column: income, has_header: true}
    training: {hidden: [64, 64], epochs: 300, optimizer: {kind: adam, learning_rate: 0.001}}
    method_overrides: {dg: {o: 2.0}}
    grid: {sr: {learning_rate: [0.001, 0.01]}}

``method_overrides`` and ``grid`` are keyed by method id. Methods sharing
a training run (e.g. ``sat`` and ``sat_sr``) get their overrides merged in
``methods`` order, and use the grid of the first member that has one.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .methods import FAMILY, METHODS, MethodConfig
from .nn import OptimizerConfig

MODES = ("bounded_abstention", "sgr", "ood")
DEFAULT_COVERAGES = (0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99)
DEFAULT_TOLERANCES = (0.0, 0.01, 0.02, 0.05, 0.10)
DEFAULT_FRACTIONS = (0.1, 0.2, 0.5, 1.0)

_METHOD_FIELDS = {f.name for f in dataclasses.fields(MethodConfig)}
_OPT_FIELDS = {f.name for f in dataclasses.fields(OptimizerConfig)}


@dataclass(frozen=True)
class DatasetSource:
    name: str
    csv: str | None = None
    label_column: int | str = -1
    has_header: bool = True
    synthetic: dict | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


@dataclass(frozen=True)
class BenchmarkConfig:
    datasets: tuple[DatasetSource, ...]
    methods: tuple[str, ...]
    coverages: tuple[float, ...] = DEFAULT_COVERAGES
    bootstrap: int = 100
    tolerances: tuple[float, ...] = DEFAULT_TOLERANCES
    mode: str = "bounded_abstention"
    sgr_fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    sgr_delta: float = 0.001
    ood_n: int | None = None
    seed: int = 0
    training: dict = field(default_factory=dict)
    method_overrides: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    out: str = "results"
    jobs: int = 1

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method id(s): {', '.join(unknown)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("method ids must be unique")
        if not self.coverages or any(not 0 < c <= 1 for c in self.coverages):
            raise ConfigError("coverages must lie in (0, 1]")
        if self.bootstrap < 1:
            raise ConfigError("bootstrap count must be >= 1")
        if any(e < 0 for e in self.tolerances):
            raise ConfigError("tolerances must be nonnegative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if any(f <= 0 for f in self.sgr_fractions):
            raise ConfigError("SGR fractions must be positive")
        if not 0 < self.sgr_delta < 1:
            raise ConfigError("SGR delta must lie in (0, 1)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for key in self.method_overrides:
            if key not in METHODS:
                raise ConfigError(f"override for unknown method {key!r}")
        for key in self.grid:
            if key not in METHODS:
                raise ConfigError(f"grid for unknown method {key!r}")
        # fail early on bad hyperparameter names or values
        for m in self.methods:
            self.method_config(m)
            for _ in self.grid_configs(m):
                pass

    # ------------------------------------------------------------------

    def families(self) -> list[tuple[str, tuple[str, ...]]]:
        """Training families in order of first appearance, with their requested methods."""
        out: dict[str, list[str]] = {}
        for m in self.methods:
            out.setdefault(FAMILY[m], []).append(m)
        return [(f, tuple(ms)) for f, ms in out.items()]

    def _overrides_for(self, method: str) -> dict:
        # a family trains once, so its members' overrides are merged in config order
        fam = FAMILY[method]
        merged: dict = {}
        for m in dict.fromkeys((*self.methods, method)):
            if FAMILY[m] == fam and m in self.method_overrides:
                merged.update(self.method_overrides[m])
        return merged

    def method_config(self, method: str, extra: dict | None = None) -> MethodConfig:
        values = {**self.training, **self._overrides_for(method), **(extra or {})}
        return build_method_config(values)

    def grid_configs(self, method: str) -> list[tuple[dict, MethodConfig]]:
        """Every grid point for ``method``'s family; ``[({}, default)]`` without a grid."""
        grid: dict = {}
        for m in self.methods:
            if FAMILY[m] == FAMILY[method] and m in self.grid:
                grid = self.grid[m]
                break
        if not grid:
            return [({}, self.method_config(method))]
        keys = sorted(grid)
        for k in keys:
            if not isinstance(grid[k], list) or not grid[k]:
                raise ConfigError(f"grid values for {k!r} must be a nonempty list")
        points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
        return [(p, self.method_config(method, p)) for p in points]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "methods": list(self.methods),
            "coverages": list(self.coverages),
            "bootstrap": self.bootstrap,
            "tolerances": list(self.tolerances),
            "sgr": {"fractions": list(self.sgr_fractions), "delta": self.sgr_delta},
            "ood": {"n": self.ood_n},
            "datasets": [d.to_dict() for d in self.datasets],
            "training": self.training,
            "method_overrides": self.method_overrides,
            "grid": self.grid,
        }


def build_method_config(values: dict) -> MethodConfig:
    """Map a flat key/value dict onto :class:`MethodConfig`.

    Optimizer fields may be given flat (``learning_rate: 0.01``) or nested
    under ``optimizer``/``unc_optimizer``.
    """
    values = dict(values)
    opt = dict(values.pop("optimizer", None) or {})
    unc_opt = dict(values.pop("unc_optimizer", None) or {})
    kwargs: dict[str, Any] = {}
    for key, val in values.items():
        if key in _OPT_FIELDS:
            opt[key] = val
        elif key in _METHOD_FIELDS:
            kwargs[key] = tuple(val) if key in ("hidden", "unc_hidden") else val
        else:
            raise ConfigError(f"unknown training key {key!r}")
    for name, spec in (("optimizer", opt), ("unc_optimizer", unc_opt)):
        bad = set(spec) - _OPT_FIELDS
        if bad:
            raise ConfigError(f"unknown optimizer key(s) {sorted(bad)}")
    try:
        kwargs["optimizer"] = OptimizerConfig(**opt)
        # the uncertainty nets follow the main optimizer unless told otherwise
        kwargs["unc_optimizer"] = OptimizerConfig(**{**opt, **unc_opt})
        return MethodConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _dataset(entry: Any, i: int) -> DatasetSource:
    if not isinstance(entry, dict):
        raise ConfigError(f"dataset #{i} must be a mapping")
    name = entry.get("name")
    csv_path = entry.get("csv")
    synth = entry.get("synthetic")
    if (csv_path is None) == (synth is None):
        raise ConfigError(f"dataset #{i} needs exactly one of 'csv' or 'synthetic'")
    if synth is not None:
        missing = {"n", "d", "priors", "separation"} - set(synth)
        if missing:
            raise ConfigError(f"synthetic dataset #{i} lacks {sorted(missing)}")
    if name is None:
        name = Path(csv_path).stem if csv_path else f"synth{i}"
    return DatasetSource(
        name=str(name),
        csv=csv_path,
        label_column=entry.get("label_column", -1),
        has_header=bool(entry.get("has_header", True)),
        synthetic=dict(synth) if synth is not None else None,
    )


_TOP_KEYS = {
    "seed", "mode", "out", "jobs", "methods", "coverages", "bootstrap", "tolerances",
    "sgr", "ood", "datasets", "training", "method_overrides", "grid",
}


def config_from_dict(raw: dict, base_dir: str | Path | None = None) -> BenchmarkConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown config key(s): {sorted(extra)}")
    datasets = [_dataset(e, i) for i, e in enumerate(raw.get("datasets") or [])]
    if base_dir is not None:
        datasets = [
            dataclasses.replace(d, csv=str(Path(base_dir) / d.csv)) if d.csv and not Path(d.csv).is_absolute() else d
            for d in datasets
        ]
    sgr = raw.get("sgr") or {}
    ood = raw.get("ood") or {}
    try:
        return BenchmarkConfig(
            datasets=tuple(datasets),
            methods=tuple(raw.get("methods") or ()),
            coverages=tuple(float(c) for c in raw.get("coverages", DEFAULT_COVERAGES)),
            bootstrap=int(raw.get("bootstrap", 100)),
            tolerances=tuple(float(e) for e in raw.get("tolerances", DEFAULT_TOLERANCES)),
            mode=str(raw.get("mode", "bounded_abstention")),
            sgr_fractions=tuple(float(f) for f in sgr.get("fractions", DEFAULT_FRACTIONS)),
            sgr_delta=float(sgr.get("delta", 0.001)),
            ood_n=None if ood.get("n") is None else int(ood["n"]),
            seed=int(raw.get("seed", 0)),
            training=dict(raw.get("training") or {}),
            method_overrides={k: dict(v) for k, v in (raw.get("method_overrides") or {}).items()},
            grid={k: dict(v) for k, v in (raw.get("grid") or {}).items()},
            out=str(raw.get("out", "results")),
            jobs=int(raw.get("jobs", 1)),
        )
    except (TypeError, AttributeError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def load_config(path: str | Path, **overrides) -> BenchmarkConfig:
    """Read a YAML config; non-``None`` keyword overrides replace file values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return config_from_dict(raw, base_dir=path.parent)
