import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abstain_bench.errors import InvalidHyperparameterError, InvalidInputError
from abstain_bench.metrics import (
    NA,
    EvalRecord,
    con_sat,
    empirical_coverage,
    err_coeff,
    evaluate,
    majority_selective_error,
    min_coeff,
    parse_cell,
    rel_err,
    risk_coverage_curve,
    selective_error,
)


def test_coverage_examples():
    assert empirical_coverage([1, 1, 0, 1]) == 0.75
    assert empirical_coverage([0, 0]) == 0.0
    assert empirical_coverage([1, 1, 1]) == 1.0
    with pytest.raises(InvalidInputError):
        empirical_coverage([])


def test_selective_error_examples():
    assert selective_error([0, 1, 1, 0], [0, 1, 0, 1], [1, 1, 1, 0]) == pytest.approx(1 / 3)
    assert selective_error([2, 2], [2, 2], [1, 1]) == 0.0
    assert selective_error([0, 1], [1, 0], [0, 0]) is None
    with pytest.raises(InvalidInputError):
        selective_error([0, 1], [0], [1, 1])


def test_majority_error_examples():
    assert majority_selective_error(0, [0, 0, 1], [1, 1, 0]) == 0.0
    assert majority_selective_error(0, [0, 1, 1], [1, 1, 1]) == pytest.approx(2 / 3)


def test_rel_err_examples():
    assert rel_err(0.0, 0.3) == 0.0
    assert rel_err(0.25, 0.25) == 1.0
    assert rel_err(0.05, 0.25) == pytest.approx(0.2)
    assert rel_err(0.1, 0.0) is None
    assert rel_err(None, 0.2) is None


def test_con_sat_examples():
    assert con_sat(0.68, 0.7, 0.01) == 0
    assert con_sat(0.68, 0.7, 0.02) == 1
    assert con_sat(0.61, 0.7, 0.10) == 1
    with pytest.raises(InvalidHyperparameterError):
        con_sat(0.5, 0.5, -0.01)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0.01, 1), st.floats(0, 0.2), st.floats(0, 0.2))
def test_con_sat_monotone_in_tolerance(cov, c, e1, e2):
    lo, hi = sorted((e1, e2))
    assert con_sat(cov, c, lo) <= con_sat(cov, c, hi)


def test_min_coeff_examples():
    assert min_coeff([1, 0, 0, 0, 0, 0, 0, 0, 0, 0], 1, 0.1) == pytest.approx(1.0)
    assert min_coeff([1] + [0] * 9, 1, 0.2) == pytest.approx(0.5)
    assert min_coeff([0, 0, 0], 1, 0.3) == 0.0
    assert min_coeff([], 1, 0.3) is None


def test_err_coeff_examples():
    assert err_coeff(0.0, 0.1) == 0.0
    assert err_coeff(0.04, 0.04) == 1.0
    assert err_coeff(0.03, 0.01) == pytest.approx(3.0)
    with pytest.raises(InvalidHyperparameterError):
        err_coeff(0.1, 0.0)


def test_risk_coverage_enumerated_example():
    pts = risk_coverage_curve([0.9, 0.8, 0.7, 0.6], [1, 1, 0, 1])
    assert pts == pytest.approx([(0.25, 0.0), (0.5, 0.0), (0.75, 1 / 3), (1.0, 0.25)])


def test_risk_coverage_calibrated_ordering_is_nondecreasing():
    conf = np.linspace(1, 0, 50)
    correct = np.arange(50) < 35
    errs = [e for _, e in risk_coverage_curve(conf, correct)]
    assert all(a <= b for a, b in zip(errs, errs[1:]))
    assert errs[-1] == pytest.approx(15 / 50)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.booleans()), min_size=1, max_size=100))
def test_risk_coverage_matches_brute_force(rows):
    conf = np.array([r[0] for r in rows], dtype=float)
    ok = np.array([r[1] for r in rows])
    expected = []
    for level in sorted(set(conf.tolist()), reverse=True):
        acc = conf >= level
        expected.append((acc.mean(), np.mean(~ok[acc])))
    got = risk_coverage_curve(conf, ok)
    assert got == pytest.approx(expected)
    covs = [c for c, _ in got]
    assert all(a < b for a, b in zip(covs, covs[1:]))


def _brute(pred, y, g, maj, mino, p, c, tols):
    acc = [i for i in range(len(y)) if g[i]]
    cov = len(acc) / len(y)
    err = sum(pred[i] != y[i] for i in acc) / len(acc) if acc else None
    emaj = sum(y[i] != maj for i in acc) / len(acc) if acc else None
    rel = None if err is None or not emaj else err / emaj
    mc = sum(y[i] == mino for i in acc) / len(acc) / p if acc else None
    sat = tuple(int(cov >= c - e - 1e-12) for e in tols)
    return cov, err, rel, mc, sat


def test_evaluate_matches_brute_force_on_small_cases():
    rng = np.random.default_rng(0)
    tols = (0.0, 0.01, 0.02, 0.05, 0.10)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        y = rng.integers(0, 2, size=n)
        pred = rng.integers(0, 2, size=n)
        g = rng.integers(0, 2, size=n).astype(bool)
        c = float(rng.choice([0.5, 0.7, 0.9]))
        rec = evaluate(pred, y, g, method="m", dataset="d", c=c, majority_class=0, minority_class=1, prior=0.25, seed=0, bootstrap=0)
        cov, err, rel, mc, sat = _brute(pred.tolist(), y.tolist(), g.tolist(), 0, 1, 0.25, c, tols)
        assert rec.coverage == pytest.approx(cov)
        assert rec.consat == sat
        for got, want in ((rec.err, err), (rec.rel_err, rel), (rec.min_coeff, mc)):
            assert (got is None and want is None) or got == pytest.approx(want)


def test_full_coverage_min_coeff_is_test_share_over_prior():
    y = np.array([0] * 8 + [1] * 2)
    rec = evaluate(y, y, np.ones(10, bool), method="m", dataset="d", c=1.0, majority_class=0, minority_class=1, prior=0.25, seed=0, bootstrap=0)
    assert rec.min_coeff == pytest.approx(0.8)
    assert rec.err == 0.0


def test_record_row_layout_and_sentinels():
    rec = evaluate([0, 1], [1, 1], [0, 0], method="m", dataset="d", c=0.7, majority_class=1, minority_class=0, prior=0.5, seed=3, bootstrap=2)
    row = dict(zip(EvalRecord.COLUMNS, rec.to_row()))
    assert list(EvalRecord.COLUMNS[:6]) == ["method", "dataset", "c", "err", "coverage", "rel_err"]
    assert [k for k in EvalRecord.COLUMNS if k.startswith("consat")] == [f"consat_{x}" for x in ("000", "001", "002", "005", "010")]
    assert row["err"] == NA and row["rel_err"] == NA and row["min_coeff"] == NA
    assert row["coverage"] == "0.0" and row["consat_010"] == "0"
    assert parse_cell(row["err"]) is None and parse_cell("0.25") == 0.25
