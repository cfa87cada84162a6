"""Experiment runner for the three benchmark modes.

Seeds fan out from the global seed through :func:`derive_seed`:

* dataset generation: ``(seed, "synth", dataset)``
* split: ``(seed, "split", dataset)``
* bootstrap resamples: ``(seed, "bootstrap", dataset)``, shared by all methods
* OOD sample: ``(seed, "ood", dataset)``
* training: ``(seed, "train", dataset, family)``, plus the coverage for
  SelNet families, which are trained once per target coverage.

Work units are (dataset, family[, coverage]) cells. Each is self-contained,
so running them in a process pool only changes wall time; results are
sorted before writing.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import calibrate as cal
from .config import BenchmarkConfig, DatasetSource
from .data import LabeledDataset, SplitBundle, load_csv, ood_uniform, split, standardize_fit, synth_gaussian
from .errors import AbstainBenchError, NoDataError, UnsupportedTaskError
from .methods import (
    AUC_BAND,
    BAND_METHODS,
    COVERAGE_TRAINED,
    ENS_AVG_SR,
    METHODS,
    SR,
    MethodConfig,
    SelectiveModel,
    confidnet_fit,
    crossfit,
    ens_fit,
    fit_dg,
    fit_sat,
    fit_selnet,
    fit_sr,
    reg_fit,
    sele_fit,
)
from .metrics import TOLERANCES, EvalRecord, err_coeff, evaluate, parse_cell, selective_error
from .seeding import derive_seed
from .stats import bootstrap_indices, rank_table, summarize

log = logging.getLogger(__name__)

SELNET_FAMILIES = ("selnet", "selnet_em")
METRICS = ("err", "coverage", "rel_err", *(f"consat_{round(e * 100):03d}" for e in TOLERANCES), "min_coeff", "err_coeff")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def load_source(source: DatasetSource, seed: int) -> LabeledDataset:
    if source.csv is not None:
        data = load_csv(source.csv, source.label_column, source.has_header)
        return LabeledDataset(data.X, data.y, data.m, source.name, data.labels)
    s = source.synthetic
    synth_seed = int(s["seed"]) if "seed" in s else derive_seed(seed, "synth", source.name)
    return synth_gaussian(int(s["n"]), int(s["d"]), s["priors"], float(s["separation"]), synth_seed, source.name)


@dataclass(frozen=True)
class PreparedDataset:
    name: str
    parts: SplitBundle
    boot: np.ndarray
    majority: int
    minority: int | None
    prior: float | None
    X_ood: np.ndarray | None


def prepare(source: DatasetSource, config: BenchmarkConfig) -> PreparedDataset:
    data = load_source(source, config.seed)
    parts = split(data, derive_seed(config.seed, "split", source.name))
    std = standardize_fit(parts.train)
    parts = SplitBundle(*(std.apply(p) for p in (parts.train, parts.calibration, parts.validation, parts.test)), parts.indices)
    train = parts.train
    binary = data.m == 2
    boot = bootstrap_indices(parts.test.n, config.bootstrap, derive_seed(config.seed, "bootstrap", source.name))
    X_ood = None
    if config.mode == "ood":
        n = config.ood_n or parts.test.n
        X_ood = ood_uniform(train, n, derive_seed(config.seed, "ood", source.name))
    return PreparedDataset(
        source.name,
        parts,
        boot,
        train.majority_class,
        train.minority_class if binary else None,
        train.p if binary else None,
        X_ood,
    )


# ---------------------------------------------------------------------------
# training families
# ---------------------------------------------------------------------------


def _attempt(fn):
    try:
        return fn()
    except (AbstainBenchError, FloatingPointError, ValueError) as exc:
        return exc


def build_family(
    family: str,
    methods: tuple[str, ...],
    parts: SplitBundle,
    cfg: MethodConfig,
    seed: int,
    c: float | None = None,
) -> dict[str, SelectiveModel | Exception]:
    """Train one family and derive a model per requested method (or the exception that stopped it)."""
    train = parts.train
    out: dict[str, SelectiveModel | Exception] = {}

    def share(base, derive):
        for m in methods:
            out[m] = base if isinstance(base, Exception) else _attempt(lambda m=m: derive(m, base))
        return out

    if family == "ce":
        base = _attempt(lambda: fit_sr(train, cfg, seed))

        def derive(m, b):
            if m == "sr":
                return b
            if m == "pluginauc":
                if train.m != 2:
                    raise UnsupportedTaskError("pluginauc supports binary tasks only")
                return b.with_kind("pluginauc", AUC_BAND)
            return confidnet_fit(b, train, cfg, derive_seed(seed, "confidnet"))

        return share(base, derive)
    if family == "dg":
        return share(_attempt(lambda: fit_dg(train, cfg, seed)), lambda m, b: b)
    if family in ("sat", "sat_em"):
        base = _attempt(lambda: fit_sat(train, cfg, seed, entropy=family == "sat_em"))
        return share(base, lambda m, b: b if m == family else b.with_kind(m, SR))
    if family in SELNET_FAMILIES:
        base = _attempt(lambda: fit_selnet(train, cfg, seed, c, entropy=family == "selnet_em"))
        return share(base, lambda m, b: b if m == family else b.with_kind(m, SR))
    if family == "ens":
        base = _attempt(lambda: ens_fit(train, cfg, seed))
        return share(base, lambda m, b: b if m == "ens" else b.with_kind("ens_sr", ENS_AVG_SR))
    if family == "reg":
        return share(_attempt(lambda: reg_fit(train, cfg, seed)), lambda m, b: b)
    if family == "sele":
        return share(_attempt(lambda: sele_fit(train, cfg, seed)), lambda m, b: b)
    if family == "xfit":
        pool = _concat(train, parts.calibration)
        base = _attempt(lambda: crossfit(pool, cfg, seed))
        return share(base, lambda m, b: b.scross() if m == "scross" else b.aucross())
    raise AbstainBenchError(f"unknown family {family!r}")


def _concat(a: LabeledDataset, b: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(np.vstack([a.X, b.X]), np.concatenate([a.y, b.y]), a.m, a.name)


def _validation_error(model: SelectiveModel, parts: SplitBundle, coverages) -> float:
    pred, conf = model.score(parts.validation.X)
    cal_scores = None if model.oof is not None else model.confidence(parts.calibration.X)
    errs = []
    for c in coverages:
        fitted = model.calibrate(parts.calibration.X, c, cal_scores)
        e = selective_error(pred, parts.validation.y, fitted.accept_scores(conf))
        errs.append(1.0 if e is None else e)
    return float(np.mean(errs))


def select_family(config, family, methods, parts, seed, c=None):
    """Train the family, running the optional grid search on the validation split."""
    points = config.grid_configs(methods[0])
    if len(points) == 1:
        return build_family(family, methods, parts, points[0][1], seed, c), points[0][0]
    coverages = (c,) if c is not None else config.coverages
    best = None
    for point, cfg in points:
        models = build_family(family, methods, parts, cfg, seed, c)
        first = models[methods[0]]
        score = math.inf if isinstance(first, Exception) else _validation_error(first, parts, coverages)
        if best is None or score < best[0]:
            best = (score, models, point)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    """One self-contained unit of work."""

    config: BenchmarkConfig
    data: PreparedDataset
    family: str
    methods: tuple[str, ...]
    coverage: float | None
    seed: int


def _failure(method, dataset, seed, exc, c=None, r=None) -> EvalRecord:
    reason = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return EvalRecord(method, dataset, c, None, None, None, None, None, None, seed, None, r, reason)


def _bounded_records(cell: Cell, method: str, model: SelectiveModel, coverages) -> list[EvalRecord]:
    d = cell.data
    test = d.parts.test
    pred, conf = model.score(test.X)
    cal_scores = None if model.oof is not None else model.confidence(d.parts.calibration.X)
    records = []
    for c in coverages:
        fitted = model.calibrate(d.parts.calibration.X, c, cal_scores)
        acc = fitted.accept_scores(conf)
        for b, idx in enumerate(d.boot):
            records.append(
                evaluate(
                    pred[idx], test.y[idx], acc[idx], method=method, dataset=d.name, c=c,
                    majority_class=d.majority, minority_class=d.minority, prior=d.prior,
                    seed=cell.seed, bootstrap=b, tolerances=cell.config.tolerances,
                )
            )
    return records


def _ood_records(cell: Cell, method: str, model: SelectiveModel, coverages) -> list[EvalRecord]:
    d = cell.data
    conf_ood = model.confidence(d.X_ood)
    cal_scores = None if model.oof is not None else model.confidence(d.parts.calibration.X)
    out = []
    for c in coverages:
        acc = model.calibrate(d.parts.calibration.X, c, cal_scores).accept_scores(conf_ood)
        out.append(EvalRecord(method, d.name, c, None, float(acc.mean()), None, None, None, None, cell.seed, None))
    return out


def _calibration_evidence(model: SelectiveModel, parts: SplitBundle) -> tuple[np.ndarray, np.ndarray]:
    if model.oof is not None:
        return model.oof
    pred, conf = model.score(parts.calibration.X)
    return conf, pred == parts.calibration.y


def _sgr_rows(cell: Cell, method: str, model: SelectiveModel, e: float) -> dict[float, list[EvalRecord]]:
    """Per target error ``r``, one record per bootstrap resample."""
    d = cell.data
    test = d.parts.test
    conf_cal, correct_cal = _calibration_evidence(model, d.parts)
    pred, conf = model.score(test.X)
    out = {}
    for frac in cell.config.sgr_fractions:
        r = frac * e
        rows = []
        if r <= 0:
            out[r] = [_failure(method, d.name, cell.seed, AbstainBenchError("majority error is zero"), r=r)]
            continue
        result = cal.sgr_threshold(conf_cal, correct_cal, r, cell.config.sgr_delta)
        acc = cal.apply_threshold(conf, result.threshold)
        for b, idx in enumerate(d.boot):
            rec = evaluate(
                pred[idx], test.y[idx], acc[idx], method=method, dataset=d.name, c=None,
                majority_class=d.majority, minority_class=d.minority, prior=d.prior,
                seed=cell.seed, bootstrap=b, tolerances=cell.config.tolerances,
            )
            rec.r = r
            rec.err_coeff = err_coeff(rec.err, r)
            rows.append(rec)
        out[r] = rows
    return out


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _average_sgr(method: str, per_model: list[dict[float, list[EvalRecord]]], seed: int) -> list[EvalRecord]:
    """Average SelNet results across the models trained for each coverage."""
    out = []
    for r in per_model[0]:
        groups = [pm[r] for pm in per_model]
        for b in range(len(groups[0])):
            rows = [g[b] for g in groups]
            if any(row.status != "ok" for row in rows):
                out.append(rows[0])
                continue
            out.append(
                EvalRecord(
                    method, rows[0].dataset, None,
                    _mean_or_none(x.err for x in rows),
                    _mean_or_none(x.coverage for x in rows),
                    _mean_or_none(x.rel_err for x in rows),
                    None,
                    _mean_or_none(x.min_coeff for x in rows),
                    _mean_or_none(x.err_coeff for x in rows),
                    seed, b, r,
                )
            )
    return out


def run_cell(cell: Cell) -> list[EvalRecord]:
    """Train one family and evaluate every requested method on it."""
    cfg = cell.config
    d = cell.data
    if cfg.mode == "sgr":
        return _run_sgr_cell(cell)
    coverages = (cell.coverage,) if cell.coverage is not None else cfg.coverages
    models, _ = select_family(cfg, cell.family, cell.methods, d.parts, cell.seed, cell.coverage)
    records = []
    for method in cell.methods:
        model = models[method]
        if not isinstance(model, Exception):
            try:
                if cfg.mode == "ood":
                    records += _ood_records(cell, method, model, coverages)
                else:
                    records += _bounded_records(cell, method, model, coverages)
                continue
            except (AbstainBenchError, FloatingPointError, ValueError) as exc:
                model = exc
        records += [_failure(method, d.name, cell.seed, model, c=c) for c in coverages]
    return records


def _run_sgr_cell(cell: Cell) -> list[EvalRecord]:
    cfg = cell.config
    d = cell.data
    test = d.parts.test
    e = float(np.mean(test.y != d.majority))
    rs = [f * e for f in cfg.sgr_fractions]
    records: list[EvalRecord] = []
    scored = [m for m in cell.methods if m not in BAND_METHODS]
    for m in cell.methods:
        if m in BAND_METHODS:
            reason = "excluded: band selection has no confidence threshold"
            records += [EvalRecord(m, d.name, None, None, None, None, None, None, None, cell.seed, None, r, reason) for r in rs]
    if not scored:
        return records
    coverages = cfg.coverages if cell.family in SELNET_FAMILIES else (None,)
    per_method: dict[str, list] = {m: [] for m in scored}
    for c in coverages:
        seed = cell.seed if c is None else derive_seed(cell.seed, c)
        models, _ = select_family(cfg, cell.family, tuple(scored), d.parts, seed, c)
        for m in scored:
            model = models[m]
            if not isinstance(model, Exception):
                try:
                    per_method[m].append(_sgr_rows(cell, m, model, e))
                    continue
                except (AbstainBenchError, FloatingPointError, ValueError) as exc:
                    model = exc
            per_method[m].append(model)
    for m in scored:
        results = per_method[m]
        failed = next((x for x in results if isinstance(x, Exception)), None)
        if failed is not None:
            records += [_failure(m, d.name, cell.seed, failed, r=r) for r in rs]
        elif len(results) == 1:
            records += [row for rows in results[0].values() for row in rows]
        else:
            records += _average_sgr(m, results, cell.seed)
    return records


def plan_cells(config: BenchmarkConfig, prepared: list[PreparedDataset]) -> list[Cell]:
    cells = []
    for d in prepared:
        for family, methods in config.families():
            seed = derive_seed(config.seed, "train", d.name, family)
            if family in SELNET_FAMILIES and config.mode != "sgr":
                cells += [Cell(config, d, family, methods, c, derive_seed(seed, c)) for c in config.coverages]
            else:
                cells.append(Cell(config, d, family, methods, None, seed))
    return cells


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _sort_key(config: BenchmarkConfig):
    d_order = {d.name: i for i, d in enumerate(config.datasets)}
    m_order = {m: i for i, m in enumerate(config.methods)}

    def key(rec: EvalRecord):
        return (
            d_order[rec.dataset],
            m_order[rec.method],
            -1.0 if rec.c is None else rec.c,
            -1.0 if rec.r is None else rec.r,
            -1 if rec.bootstrap is None else rec.bootstrap,
        )

    return key


def write_records(path: Path, records: list[EvalRecord]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EvalRecord.COLUMNS)
        for rec in records:
            w.writerow(rec.to_row())


def read_records(path: Path) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(EvalRecord.COLUMNS):
            raise NoDataError(f"{path} is not a records file")
        return list(reader)


def summarize_rows(rows: list[dict]) -> list[dict]:
    """Mean and std of every metric per (dataset, method, c, r) over successful rows."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["dataset"], row["method"], row["c"], row["r"]), []).append(row)
    out = []
    for (dataset, method, c, r), members in groups.items():
        ok = [x for x in members if x["status"] == "ok"]
        entry = {"dataset": dataset, "method": method, "c": c, "r": r, "n_ok": str(len(ok)), "n_failed": str(len(members) - len(ok))}
        for metric in METRICS:
            vals = [v for v in (parse_cell(x[metric]) for x in ok) if v is not None]
            if vals:
                mean, std = summarize(vals)
                entry[f"{metric}_mean"], entry[f"{metric}_std"] = repr(mean), repr(std)
            else:
                entry[f"{metric}_mean"] = entry[f"{metric}_std"] = "NA"
        out.append(entry)
    return out


def summary_columns() -> list[str]:
    cols = ["dataset", "method", "c", "r", "n_ok", "n_failed"]
    for metric in METRICS:
        cols += [f"{metric}_mean", f"{metric}_std"]
    return cols


def rank_tables(rows: list[dict], alpha: float = 0.05) -> dict[str, dict]:
    """One rank table per coverage over the pooled (dataset, bootstrap) trials, ranked by RelErr."""
    methods = list(dict.fromkeys(r["method"] for r in rows))
    by_c: dict[str, dict[tuple, dict]] = {}
    for row in rows:
        if row["c"] == "NA" or row["bootstrap"] == "NA" or row["r"] != "NA":
            continue
        trial = (row["dataset"], int(row["bootstrap"]))
        by_c.setdefault(row["c"], {}).setdefault(trial, {})[row["method"]] = parse_cell(row["rel_err"])
    tables = {}
    for c in sorted(by_c, key=float):
        trials = by_c[c]
        # methods that failed everywhere have no trial rows; rank them worst
        matrix = [[trials[t].get(m) for m in methods] for t in sorted(trials)]
        tables[c] = rank_table(methods, matrix, alpha=alpha).to_json()
        tables[c]["coverage"] = float(c)
    return tables


def _rank_filename(c: str) -> str:
    return f"ranks_c{float(c):g}.json"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run(config: BenchmarkConfig, out: str | Path | None = None, jobs: int | None = None) -> Path:
    """Execute the configured mode and write every result file to ``out``."""
    out_dir = Path(out or config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = jobs or config.jobs
    prepared = [prepare(src, config) for src in config.datasets]
    cells = plan_cells(config, prepared)
    log.info("running %d cells on %d worker(s)", len(cells), jobs)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
            chunks = list(pool.map(run_cell, cells))
    else:
        chunks = [run_cell(cell) for cell in cells]
    records = sorted((rec for chunk in chunks for rec in chunk), key=_sort_key(config))
    write_records(out_dir / "records.csv", records)

    rows = read_records(out_dir / "records.csv")
    summary = summarize_rows(rows)
    with (out_dir / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=summary_columns(), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    if config.mode == "bounded_abstention":
        for c, table in rank_tables(rows).items():
            _write_json(out_dir / _rank_filename(c), table)
    meta = {
        "version": __version__,
        "seed": config.seed,
        "mode": config.mode,
        "config": config.to_dict(),
        "methods_available": list(METHODS),
        "coverage_trained": sorted(COVERAGE_TRAINED),
    }
    _write_json(out_dir / "run_meta.json", meta)
    return out_dir


def report(in_dir: str | Path, alpha: float = 0.05) -> dict[str, dict]:
    """Rank tables for a finished run; also rewrites the ``ranks_c*.json`` files."""
    in_dir = Path(in_dir)
    path = in_dir / "records.csv"
    if not path.is_file():
        raise NoDataError(f"no results found in {in_dir}")
    rows = read_records(path)
    if not rows:
        raise NoDataError(f"{path} holds no records")
    tables = rank_tables(rows, alpha)
    if not tables:
        raise NoDataError(f"{path} holds no bounded-abstention records to rank")
    for c, table in tables.items():
        _write_json(in_dir / _rank_filename(c), table)
    return tables


def format_report(tables: dict[str, dict]) -> str:
    lines = []
    for c, t in tables.items():
        lines.append(f"coverage {float(c):g}  (trials={t['n_trials']})")
        order = sorted(range(len(t["methods"])), key=lambda i: t["mean_ranks"][i])
        for i in order:
            lines.append(f"  {t['methods'][i]:<14}{t['mean_ranks'][i]:8.3f}")
        p = t["p_value"]
        cd = t["critical_difference"]
        lines.append(f"  friedman p = {'NA' if p is None else f'{p:.4g}'}   CD = {'NA' if cd is None else f'{cd:.4f}'}")
        for g in t["groups"]:
            lines.append("  group: " + ", ".join(g))
        lines.append("")
    return "\n".join(lines)
