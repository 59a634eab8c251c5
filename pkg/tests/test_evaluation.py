from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_single, brute_two_stage, confusion, random_instance, rates

from fraudrl.evaluation import (
    SERIES_HEADER,
    EvalReport,
    UnreachableRecall,
    baseline_eval,
    baseline_search,
    block_masks,
    dollar_metrics,
    evaluate_agent,
    evaluate_scores,
    longterm_report,
    score_dataset,
    search_levels,
    series_csv,
    threshold_search,
)
from fraudrl.policy import init_params, zero_params
from fraudrl.synthdata import Dataset, GenConfig, TransactionRecord, generate_dataset


def lw(label, wgt):
    return np.asarray(label), np.asarray(wgt, dtype=float)


def test_zero_params_score_half():
    d = generate_dataset(GenConfig(n_transactions=20))
    p0, p1 = score_dataset(zero_params(), d)
    assert len(p0) == len(p1) == 20
    np.testing.assert_array_equal(p0, 0.5)
    np.testing.assert_array_equal(p1, 0.5)


def test_dollar_metrics_examples():
    label, wgt = [1, 1, 0], [100.0, 20.0, 50.0]
    m = dollar_metrics([True, False, False], [False, True, False], lw(label, wgt))
    assert (m.recall, m.precision) == (1.0, 1.0)
    assert m.tp_gmv_stage == (100.0, 20.0)
    m = dollar_metrics([True, False, False], [False, False, False], lw(label, wgt))
    assert m.recall == pytest.approx(100 / 120)
    c = m.confusion
    assert c.total == pytest.approx(170.0)


def test_dollar_metrics_conventions_and_errors():
    m = dollar_metrics([False], [False], lw([0], [5.0]))
    assert m.precision == 1.0 and m.recall == 1.0
    with pytest.raises(ValueError):
        dollar_metrics([True], [True], lw([1], [5.0]))
    with pytest.raises(ValueError):
        dollar_metrics([True, False], [False], lw([1], [5.0]))


def test_dollar_metrics_against_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = 6
        label = rng.integers(0, 2, n)
        wgt = np.round(rng.uniform(1, 100, n), 2)
        b0 = rng.random(n) < 0.3
        b1 = ~b0 & (rng.random(n) < 0.4)
        m = dollar_metrics(b0, b1, lw(label, wgt))
        tp, fp, tn, fn = confusion(b0, b1, label, wgt)
        recall, precision = rates(tp, fp, fn)
        assert m.confusion.tp_gmv == pytest.approx(float(tp))
        assert m.confusion.tn_gmv == pytest.approx(float(tn))
        assert m.recall == pytest.approx(float(recall))
        assert m.precision == pytest.approx(float(precision))


def test_three_transaction_example():
    # fraud $100 (0.9, 0.9), legit $50 (0.8, 0.1), fraud $20 (0.3, 0.95)
    p0 = np.array([0.9, 0.8, 0.3])
    p1 = np.array([0.9, 0.1, 0.95])
    d = lw([1, 0, 1], [100.0, 50.0, 20.0])
    r = threshold_search(p0, p1, d, 1.0)
    assert (r.t0, r.t1) == (0.9, 0.95)
    assert r.precision == 1.0 and r.recall == 1.0
    b0, b1 = block_masks(p0, p1, r.t0, r.t1)
    assert b0.tolist() == [True, False, False]
    assert b1.tolist() == [False, False, True]


def test_no_fraud_zero_target():
    r = threshold_search(np.array([0.2, 0.4]), np.array([0.1, 0.3]), lw([0, 0], [3.0, 4.0]), 0.0)
    assert r.precision == 1.0
    assert (r.t0, r.t1) == (math.inf, math.inf)


def test_bad_theta_and_unreachable():
    with pytest.raises(ValueError):
        threshold_search(np.array([0.5]), np.array([0.5]), lw([1], [1.0]), 1.5)
    # finite scores can always block everything; NaN scores never pass a cut
    with pytest.raises(UnreachableRecall):
        threshold_search(np.array([np.nan]), np.array([np.nan]), lw([1], [1.0]), 0.5)
    with pytest.raises(UnreachableRecall):
        baseline_search(np.array([np.nan]), lw([1], [1.0]), [0.5])


def test_two_stage_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(300):
        p0, p1, label, wgt = random_instance(rng)
        theta = float(rng.choice([0.0, 0.3, 0.5, 0.8, 0.85, 0.9, 1.0]))
        want = brute_two_stage(p0, p1, label, wgt, theta)
        got = threshold_search(p0, p1, lw(label, wgt), theta)
        assert (got.t0, got.t1) == (want[0], want[1])
        assert got.recall == float(want[2])
        assert got.precision == float(want[3])


def test_baseline_matches_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(300):
        p0, _, label, wgt = random_instance(rng)
        theta = float(rng.choice([0.0, 0.5, 0.8, 0.9, 1.0]))
        want = brute_single(p0, label, wgt, theta)
        got = baseline_search(p0, lw(label, wgt), [theta])[0]
        assert got.threshold == want[0]
        assert got.precision == float(want[2])


def test_baseline_hand_case():
    # scores 0.9 fraud $10, 0.5 legit $10, 0.4 fraud $10; recall 1 forces the 0.4 cut
    got = baseline_search(np.array([0.9, 0.5, 0.4]), lw([1, 0, 1], [10.0, 10.0, 10.0]), [0.5, 1.0])
    assert got[0].threshold == 0.9 and got[0].precision == 1.0
    assert got[1].threshold == 0.4 and got[1].precision == pytest.approx(2 / 3)
    perfect = baseline_search(np.array([0.9, 0.1]), lw([1, 0], [5.0, 5.0]), [1.0])[0]
    assert perfect.precision == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_precision_monotone_in_recall_target(seed):
    rng = np.random.default_rng(seed)
    p0, p1, label, wgt = random_instance(rng, max_n=30, levels=12)
    res = search_levels(p0, p1, lw(label, wgt), [0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    precs = [r.precision for r in res]
    assert all(a >= b for a, b in zip(precs, precs[1:]))
    assert all(r.recall >= r.theta for r in res)


def test_report_fields_and_roundtrip():
    d = generate_dataset(GenConfig(n_transactions=4000, fraud_rate=0.05))
    rep = evaluate_agent(init_params(seed=1), d)
    assert list(rep.thetas) == [0.8, 0.85, 0.9]
    for lv in rep.levels:
        assert lv.recall >= lv.theta
        assert 0 <= lv.precision <= 1 and 0 <= lv.baseline_precision <= 1
        b0, b1 = block_masks(*score_dataset(init_params(seed=1), d), lv.t0, lv.t1)
        m = dollar_metrics(b0, b1, d)
        assert m.tp_gmv_stage == pytest.approx(lv.tp_gmv_stage)
        assert m.precision == pytest.approx(lv.precision)
    again = EvalReport.from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()


def test_report_flags():
    d = Dataset.from_records([TransactionRecord(0, (0.1, 0.1), (0.1, 0.1), 0, 5.0, 0)])
    rep = evaluate_scores(np.array([0.3]), np.array([0.3]), d, [0.8])
    assert "no_fraud_gmv" in rep.flags


def test_baseline_eval_uses_first_pre_score():
    d = generate_dataset(GenConfig(n_transactions=2000, fraud_rate=0.05))
    a = baseline_eval(d, [0.8])[0]
    b = baseline_search(d.pre[:, 0], d, [0.8])[0]
    assert a == b


def long_data():
    cfg = GenConfig(n_transactions=36_000, n_days=180, start_day=29, fraud_rate=0.03, seed=5)
    return generate_dataset(cfg)


def test_longterm_window_count_and_csv():
    d = long_data()
    params = init_params(seed=2)
    windows = longterm_report(params, d, 30, [0.85])
    assert len(windows) == 6
    assert [w.window_start for w in windows] == [29, 59, 89, 119, 149, 179]
    rows = list(csv.reader(io.StringIO(series_csv(windows))))
    assert rows[0] == SERIES_HEADER
    assert len(rows) == 7


def test_longterm_single_window():
    d = long_data()
    assert len(longterm_report(init_params(), d, 365, [0.85])) == 1


def test_longterm_matches_slice_recompute():
    d = long_data()
    params = init_params(seed=4)
    for w in longterm_report(params, d, 30, [0.8, 0.9]):
        part = d.take(np.flatnonzero((d.days >= w.window_start) & (d.days < w.window_end)))
        alone = evaluate_agent(params, part, [0.8, 0.9])
        assert alone.to_dict() == w.report.to_dict()


def test_longterm_flags_empty_window():
    d = long_data()
    gap = d.take(np.flatnonzero((d.days < 59) | (d.days >= 89)))
    windows = longterm_report(init_params(), gap, 30, [0.85], start_day=29)
    assert windows[1].flagged and windows[1].report.flags == ["empty"]
    assert not windows[0].flagged
