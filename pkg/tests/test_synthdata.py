from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudrl.synthdata import (
    ConfigError,
    Dataset,
    GenConfig,
    TransactionRecord,
    generate_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)


def small(n=2000, **kw):
    return generate_dataset(GenConfig(n_transactions=n, **kw))


def test_record_count_and_invariants():
    d = small(5000)
    assert len(d) == 5000
    assert np.all((d.pre >= 0) & (d.pre <= 1))
    assert np.all((d.post >= 0) & (d.post <= 1))
    assert np.all(d.wgt > 0)
    assert set(np.unique(d.label)) <= {0, 1}
    assert np.all(np.diff(d.days) >= 0)


def test_fraud_rate_within_three_sigma():
    cfg = GenConfig(n_transactions=200_000)
    d = generate_dataset(cfg)
    p = cfg.fraud_rate
    sd = math.sqrt(len(d) * p * (1 - p))
    assert abs(d.label.sum() - len(d) * p) < 3 * sd


def test_table_sized_fraud_count():
    # expected count at the default rate for a table-sized dataset
    n = 2_136_590
    assert round(n * GenConfig().fraud_rate) == pytest.approx(28_226, abs=30)


def test_empty_dataset_has_meta():
    d = small(0)
    assert len(d) == 0
    assert d.meta["config_digest"] == GenConfig(n_transactions=0).digest()
    assert d.records == []


def test_deterministic_bytes():
    a = small(3000, seed=7).to_csv()
    b = small(3000, seed=7).to_csv()
    c = small(3000, seed=8).to_csv()
    assert a == b
    assert a != c


def test_config_errors_name_the_field():
    with pytest.raises(ConfigError) as exc:
        generate_dataset(GenConfig(fraud_rate=1.5))
    assert exc.value.field == "fraud_rate"
    bad = GenConfig().score_beta_params
    bad["pre0"]["legit"] = (0.0, 1.0)
    with pytest.raises(ConfigError) as exc:
        GenConfig(score_beta_params=bad).validate()
    assert exc.value.field == "score_beta_params"
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"no_such_field": 1})


def test_post_scores_separate_more_than_pre():
    d = small(100_000)
    fraud = d.label == 1
    gap_pre = d.pre[fraud, 0].mean() - d.pre[~fraud, 0].mean()
    gap_post = d.post[fraud, 0].mean() - d.post[~fraud, 0].mean()
    assert gap_pre > 0
    assert gap_post > gap_pre


def test_fraud_value_decays_over_buckets():
    cfg = GenConfig(n_transactions=200_000, n_days=28, fraud_value_decay=0.5)
    d = generate_dataset(cfg)
    fraud = d.label == 1
    early = d.wgt[fraud & (d.days < 7)].mean()
    late = d.wgt[fraud & (d.days >= 21)].mean()
    assert late < early * 0.3


def test_config_roundtrip_and_digest():
    cfg = GenConfig(n_transactions=10, day_volume=(1, 2, 3), n_days=3)
    again = GenConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_day_volume_allocation():
    d = generate_dataset(GenConfig(n_transactions=100, n_days=4, day_volume=(1, 1, 2, 0)))
    counts = np.bincount(d.days, minlength=4)
    assert counts.tolist() == [25, 25, 50, 0]


def test_csv_roundtrip(tmp_path):
    d = small(500)
    path = tmp_path / "d.csv"
    save_dataset(d, path)
    back = load_dataset(path)
    assert path.read_text().splitlines()[0] == "id,day,pre0,pre1,post0,post1,label,wgt"
    assert back.meta == d.meta
    np.testing.assert_allclose(back.pre, d.pre, atol=5e-7)
    np.testing.assert_allclose(back.wgt, d.wgt, atol=5e-7)
    assert back.to_csv() == d.to_csv()


def test_records_view():
    d = small(10)
    rec = d[3]
    assert isinstance(rec, TransactionRecord)
    assert rec.pre_scores == (d.pre[3, 0], d.pre[3, 1])
    again = Dataset.from_records(d.records, d.meta)
    assert again.to_csv() == d.to_csv()


def test_split_table_windows():
    cfg = GenConfig(n_transactions=20_900, n_days=209)
    train, test_s, test_l = split_dataset(generate_dataset(cfg), [14, 29])
    assert train.day_range == (0, 13)
    assert test_s.day_range == (14, 28)
    assert test_l.day_range == (29, 208)
    assert len(train) + len(test_s) + len(test_l) == 20_900


def test_split_past_end():
    d = small(300)
    full, empty = split_dataset(d, [10_000])
    assert len(full) == len(d)
    assert len(empty) == 0


def test_split_rejects_non_increasing():
    with pytest.raises(ValueError):
        split_dataset(small(10), [5, 5])
    with pytest.raises(ValueError):
        split_dataset(small(10), [6, 2])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=4, unique=True))
def test_split_partition_property(cuts):
    d = small(1000, n_days=18)
    parts = split_dataset(d, sorted(cuts))
    assert sum(len(p) for p in parts) == len(d)
    ids = np.concatenate([p.ids for p in parts])
    assert sorted(ids.tolist()) == sorted(d.ids.tolist())
    bounds = [-math.inf, *sorted(cuts), math.inf]
    for k, p in enumerate(parts):
        assert np.all((p.days >= bounds[k]) & (p.days < bounds[k + 1]))


def test_splits_record_their_own_window_and_exact_sizes():
    vol = [6] * 4 + [2] * 3 + [1] * 6
    d = generate_dataset(GenConfig(n_transactions=3600, n_days=13, day_volume=vol, seed=3))
    parts = split_dataset(d, [4, 7])
    assert [len(p) for p in parts] == [2400, 600, 600]
    assert [p.meta["day_range"] for p in parts] == [[0, 3], [4, 6], [7, 12]]
