import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoensemble import metrics
from evoensemble.metrics import METRIC_FIELDS, MetricReport
from oracles import metrics_loop


def test_perfect_prediction():
    r = metrics.evaluate([1, 2, 3], [1, 2, 3])
    assert (r.mse, r.rmse, r.mae, r.msle, r.smape) == (0, 0, 0, 0, 0)
    assert r.evs == 1 and r.r_value == 1


def test_two_point_example():
    t, e = [100.0, 200.0], [110.0, 190.0]
    r = metrics.evaluate(t, e)
    assert r.mae == 10 and r.rmse == 10
    assert r.smape == pytest.approx(0.5 * (10 / 105 + 10 / 195) * 100, abs=1e-12)
    assert round(r.smape, 4) == 7.3260
    o = metrics_loop(t, e)
    assert r.evs == pytest.approx(o["evs"], abs=1e-12)
    assert r.r_value == pytest.approx(o["r_value"], abs=1e-12)


def test_constant_prediction_at_mean():
    r = metrics.evaluate([1.0, 2.0, 6.0], [3.0, 3.0, 3.0])
    assert r.evs == 0.0
    assert math.isnan(r.r_value) and not r.r_defined


def test_msle_clamps_and_counts():
    r = metrics.evaluate([1.0, 2.0, -1.0], [-0.5, 2.0, 0.0])
    assert r.msle_clamped == 2
    assert r.msle == pytest.approx(math.log(2) ** 2 / 3, abs=1e-15)


def test_smape_zero_over_zero():
    assert metrics.evaluate([0.0, 2.0], [0.0, 2.0]).smape == 0.0


def test_length_mismatch_and_empty():
    with pytest.raises(ValueError):
        metrics.evaluate([1, 2], [1])
    with pytest.raises(ValueError):
        metrics.evaluate([], [])


def _stub(v) -> MetricReport:
    return MetricReport(*([float(v)] * 7), n_samples=10)


def test_summary_of_three():
    s = metrics.summarize([_stub(1), _stub(2), _stub(3)])
    for m in METRIC_FIELDS:
        assert s.stats[m] == {"min": 1, "max": 3, "mean": 2, "median": 2, "std": 1}


def test_summary_of_one():
    s = metrics.summarize([_stub(4.5)])
    assert s.stats["mse"] == {"min": 4.5, "max": 4.5, "mean": 4.5, "median": 4.5, "std": 0.0}


def test_summary_permutation_invariant(rng):
    reps = [MetricReport(*rng.normal(size=7), n_samples=5) for _ in range(9)]
    a = metrics.summarize(reps)
    b = metrics.summarize([reps[i] for i in rng.permutation(9)])
    assert a == b


def test_summary_csv_layout():
    text = metrics.summaries_to_csv({"A": metrics.summarize([_stub(1), _stub(3)]), "B": None})
    lines = text.splitlines()
    assert lines[0] == "model,statistic,MSE,RMSE,MAE,MSLE,SMAPE,EVS,R-value"
    assert [ln.split(",")[1] for ln in lines[1:6]] == ["min", "max", "mean", "median", "std"]
    assert lines[6] == "B,FAILED,,,,,,,"


def test_json_round_trip():
    r = metrics.evaluate([1.0, 5.0, 2.0], [1.5, 4.0, 2.5])
    assert MetricReport.from_dict(json.loads(metrics.report_to_json(r))) == r
    s = metrics.summarize([r, r])
    assert metrics.RunSummary.from_dict(json.loads(metrics.summary_to_json(s))) == s
    assert list(json.loads(metrics.report_to_json(r)))[:7] == list(METRIC_FIELDS)


def test_loop_oracle_ten_thousand_points():
    r = np.random.default_rng(8)
    t = r.gamma(2.0, 50.0, 10_000)
    e = t + r.normal(0, 30, 10_000)
    got = metrics.evaluate(t, e)
    want = metrics_loop(t.tolist(), e.tolist())
    for m in METRIC_FIELDS:
        assert getattr(got, m) == pytest.approx(want[m], rel=1e-9, abs=1e-9)


# ---- properties

vec = st.integers(3, 60).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, 10**6)))


def _pair(n, seed):
    r = np.random.default_rng(seed)
    t = r.gamma(2.0, 40.0, n) + 1
    e = np.abs(t + r.normal(0, 20, n)) + 0.5
    return t, e


@settings(max_examples=60, deadline=None)
@given(vec, st.floats(0.01, 100))
def test_scale_equivariance(case, c):
    t, e = _pair(*case)
    a, b = metrics.evaluate(t, e), metrics.evaluate(c * t, c * e)
    assert b.mse == pytest.approx(c * c * a.mse, rel=1e-9)
    assert b.rmse == pytest.approx(c * a.rmse, rel=1e-9)
    assert b.mae == pytest.approx(c * a.mae, rel=1e-9)
    for m in ("smape", "evs", "r_value"):
        assert getattr(b, m) == pytest.approx(getattr(a, m), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(vec, st.floats(-1000, 1000))
def test_shift_invariance_of_r_and_evs(case, shift):
    t, e = _pair(*case)
    a, b = metrics.evaluate(t, e), metrics.evaluate(t + shift, e + shift)
    assert b.r_value == pytest.approx(a.r_value, abs=1e-9)
    assert b.evs == pytest.approx(a.evs, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(vec)
def test_evs_equals_r_squared_for_least_squares_fit(case):
    t, x = _pair(*case)
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    e = A @ coef
    r = metrics.evaluate(t, e)
    assert r.evs == pytest.approx(r.r_value**2, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(vec)
def test_matches_loop_oracle(case):
    t, e = _pair(*case)
    t[0] = -1.0  # exercise clamping
    got = metrics.evaluate(t, e)
    want = metrics_loop(t.tolist(), e.tolist())
    for m in METRIC_FIELDS:
        assert getattr(got, m) == pytest.approx(want[m], rel=1e-9, abs=1e-9)
