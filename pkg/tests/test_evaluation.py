import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import _bruteforce as brute
from tailminer import data
from tailminer import evaluation as ev
from tailminer.data import Dataset
from tailminer.errors import InvalidInputError, UndefinedBaselineError
from tailminer.nn import TrainConfig
from tailminer.ranking import RankList


def rank_for(pattern):
    """Rank list over ids 0..n-1 in order, with oracle class 1 where pattern is true."""
    n = len(pattern)
    rank = RankList(np.arange(n), np.linspace(1, 0, n), "x")
    oracle = {i: int(bool(p)) for i, p in enumerate(pattern)}
    return rank, oracle


def curve(pattern):
    rank, oracle = rank_for(pattern)
    return ev.pr_curve(rank, oracle, {1})


def test_four_item_fixture():
    c = curve([1, 0, 1, 0])
    np.testing.assert_allclose(c.precision, [1, 0.5, 2 / 3, 0.5])
    np.testing.assert_allclose(c.recall, [0.5, 0.5, 1, 1])
    assert ev.avg_f(c) == pytest.approx(0.6583, abs=1e-4)


def test_perfect_ranking():
    c = curve([1, 1, 1, 0, 0])
    assert (c.precision[:3] == 1).all()
    assert ev.auc_pr(c) == 1.0
    assert ev.avg_f(curve([1])) == 1.0
    # all-positive pool of 3: F = [2/4, 4/5, 1]
    assert ev.avg_f(curve([1, 1, 1])) == pytest.approx((0.5 + 0.8 + 1.0) / 3, abs=1e-15)


def test_negative_prefix_is_zero():
    c = curve([0, 0, 1])
    assert c.precision[0] == c.recall[0] == c.f_score[0] == 0.0


def test_single_positive_last():
    assert ev.auc_pr(curve([0, 0, 0, 1])) == pytest.approx(0.25)


def test_no_positives():
    c = curve([0, 0, 0])
    assert ev.auc_pr(c) == 0.0 and ev.avg_f(c) == 0.0


def test_missing_oracle_label():
    rank = RankList(np.array([0, 1]), np.array([1.0, 0.0]), "x")
    with pytest.raises(InvalidInputError, match="oracle"):
        ev.pr_curve(rank, {0: 1}, {1})
    with pytest.raises(InvalidInputError):
        ev.pr_curve(rank, {0: 1, 1: 0}, set())


@given(st.lists(st.booleans(), min_size=1, max_size=20))
def test_matches_bruteforce(pattern):
    c = curve(pattern)
    assert abs(ev.auc_pr(c) - brute.auc(pattern)) <= 1e-12
    assert abs(ev.avg_f(c) - brute.avg_f(pattern)) <= 1e-12
    if any(pattern):
        assert c.recall[-1] == 1.0
    assert (np.diff(c.recall) >= 0).all()


@given(st.lists(st.booleans(), min_size=1, max_size=20))
def test_prepending_a_hit_never_hurts(pattern):
    assert ev.auc_pr(curve([True] + pattern)) >= ev.auc_pr(curve(pattern)) - 1e-12


def test_random_auc_near_prevalence():
    rng = np.random.default_rng(0)
    aucs = []
    for _ in range(100):
        pattern = np.zeros(1000, dtype=bool)
        pattern[rng.choice(1000, 100, replace=False)] = True
        aucs.append(ev.auc_pr(curve(pattern.tolist())))
    assert abs(np.mean(aucs) - 0.1) <= 0.05


def test_relative_improvement():
    assert ev.relative_improvement(0.7, 0.7) == 0.0
    assert ev.relative_improvement(1.5, 1.0) == 50.0
    for bad in (0.0, -1.0):
        with pytest.raises(UndefinedBaselineError):
            ev.relative_improvement(1.0, bad)


def test_improvement_table_and_report():
    reports = {m: ev.EvalReport(m, 0, a, f) for m, a, f in
               [("ours", 0.6, 0.5), ("entropy", 0.3, 0.25), ("random", 0.0, 0.1)]}
    table = ev.improvement_table(reports)
    assert table["entropy"] == {"auc_pr": pytest.approx(100.0), "avg_f": pytest.approx(100.0)}
    assert table["random"]["auc_pr"] is None
    json.dumps(reports["ours"].as_dict())


def test_evaluate_reports_prefixes():
    rank, oracle = rank_for([1] * 60 + [0] * 90)
    report, c = ev.evaluate(rank, oracle, {1}, seed=4)
    assert report.precision_at == {50: 1.0, 100: 0.6}
    assert report.seed == 4 and report.method == "x"


def test_export_formats():
    c = curve([1, 0])
    assert ev.pr_points_csv(c).splitlines() == ["k,precision,recall,f_score", "1,1,1,1", "2,0.5,1,0.66666666666666663"]
    assert ev.plot_data(c).splitlines()[1:] == ["1 1", "1 0.5"]


def test_oracle_access_only_through_interface():
    pool = data.generate_synthetic(data.SkewProfile(head_count=10, multipliers=(1, 1), feature_dim=2,
                                                    pool_per_class=3, test_per_class=1)).pool
    labels = ev.oracle_labels(pool)
    assert sorted(labels) == sorted(pool.ids.tolist())
    annotated = ev.annotate(pool, pool.ids[:2])
    assert annotated.labels.tolist() == [labels[int(i)] for i in pool.ids[:2]]
    with pytest.raises(InvalidInputError):
        ev.oracle_labels(pool.without_oracle())


# --- finetuning ------------------------------------------------------------------

SMALL = data.SkewProfile(head_count=100, multipliers=(1, 1, 0.05), feature_dim=3, seed=1,
                         pool_per_class=20, test_per_class=20)
FT_CFG = TrainConfig(learning_rate=0.3, epochs=4, seed=2)


@pytest.fixture(scope="module")
def small():
    return data.generate_synthetic(SMALL)


def test_finetune_zero_samples_equals_baseline(small):
    rank = RankList.from_scores(small.pool.ids, np.zeros(len(small.pool)), "random")
    rep = ev.finetune_experiment(small.train, small.pool, small.test, rank, [0], {2}, (6,), FT_CFG)
    assert rep.rows[0].per_class_accuracy == rep.baseline_accuracy
    assert rep.rows[0].tail_deltas == {2: 0.0}


def test_finetune_counts_mined_tail(small):
    oracle = ev.oracle_labels(small.pool)
    scores = [float(oracle[int(i)] == 2) for i in small.pool.ids]
    rank = RankList.from_scores(small.pool.ids, scores, "oracle")
    rep = ev.finetune_experiment(small.train, small.pool, small.test, rank, [10, 30], {2}, (6,), FT_CFG)
    assert [r.tail_mined for r in rep.rows] == [10, 20]
    cont = ev.finetune_experiment(small.train, small.pool, small.test, rank, [10], {2}, (6,), FT_CFG,
                                  mode="continue")
    assert cont.mode == "continue"


def test_finetune_bad_sizes(small):
    rank = RankList.from_scores(small.pool.ids, np.zeros(len(small.pool)), "random")
    with pytest.raises(InvalidInputError):
        ev.finetune_experiment(small.train, small.pool, small.test, rank, [len(small.pool) + 1], {2})
    with pytest.raises(InvalidInputError):
        ev.finetune_experiment(small.train, small.pool, small.test, rank, [1], {2}, mode="warm")


def test_oracle_injection_helps_tail(benchmark):
    cfg, runs, _ = benchmark
    deltas = []
    for r in runs:
        pool = r.splits.pool
        oracle = ev.oracle_labels(pool)
        tail = r.models.catalog.tail_classes
        rank = RankList.from_scores(pool.ids, [float(oracle[int(i)] in tail) for i in pool.ids], "oracle")
        rep = ev.finetune_experiment(r.splits.train, pool, r.splits.test, rank, [100], tail,
                                     cfg.backbone_arch, cfg.with_seed(r.seed).backbone,
                                     baseline=r.models.backbone)
        deltas.append(rep.rows[0].mean_tail_delta)
    assert np.mean(deltas) >= 0
