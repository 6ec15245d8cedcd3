import os
import tempfile

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tailminer import data
from tailminer.data import Dataset, DetectionSet, SkewProfile, SplitRole
from tailminer.errors import InvalidInputError, InvalidProfileError, ParseError

SMALL = SkewProfile(head_count=60, multipliers=(1, 1, 1, 0.1), feature_dim=3,
                    pool_per_class=7, test_per_class=5, seed=11)


def labelled(counts, dim=2):
    labels = np.repeat(np.arange(len(counts)), counts)
    return Dataset(np.arange(labels.size), np.zeros((labels.size, dim)), labels, "train", len(counts))


# --- catalog ----------------------------------------------------------------


def test_default_profile_tail_ratios():
    counts = SkewProfile().train_counts()
    assert counts == [1500] * 8 + [60, 5]
    cat = data.catalog_from_counts(counts)
    # mean = 12065 / 10 = 1206.5
    assert cat.skewness_ratios[8] == pytest.approx(60 / 1206.5, abs=1e-12)
    assert cat.skewness_ratios[8] == pytest.approx(0.05, abs=0.001)
    assert cat.skewness_ratios[9] == pytest.approx(0.004, abs=0.0002)
    assert cat.tail_classes == frozenset({8, 9})


def test_coco_shaped_catalog():
    names = ["car", "person", "dog", "chair", "bottle", "a", "b", "c", "d", "e", "f"]
    counts = [50, 1400, 1000, 140, 230, 1400, 1400, 1400, 1400, 1290, 1290]
    cat = data.catalog_from_counts(counts, names)
    np.testing.assert_allclose(cat.skewness_ratios[[0, 3, 4]], [0.05, 0.14, 0.23], atol=1e-12)
    assert {names[k] for k in cat.tail_classes} == {"car", "chair", "bottle"}


def test_balanced_catalog_has_no_tail():
    cat = data.compute_catalog(labelled([4, 4, 4]))
    np.testing.assert_allclose(cat.skewness_ratios, 1.0)
    assert not cat.tail_classes


def test_single_class_holds_everything():
    cat = data.catalog_from_counts([0, 12, 0, 0])
    np.testing.assert_allclose(cat.skewness_ratios, [0, 4, 0, 0])
    assert cat.tail_classes == frozenset({0, 2, 3})


def test_empty_dataset_rejected():
    with pytest.raises(InvalidInputError):
        data.compute_catalog(labelled([0, 0]))


@given(st.lists(st.integers(0, 5000), min_size=1, max_size=30).filter(any))
def test_catalog_invariants(counts):
    cat = data.catalog_from_counts(counts)
    assert abs(cat.proportions.sum() - 1.0) <= 1e-12
    assert abs(cat.skewness_ratios.mean() - 1.0) <= 1e-12
    assert cat.tail_classes == {k for k, s in enumerate(cat.skewness_ratios) if s < 0.30}


# --- generator ----------------------------------------------------------------


def test_generate_counts_and_balance():
    s = data.generate_synthetic(SMALL)
    assert np.bincount(s.train.labels).tolist() == [60, 60, 60, 6]
    assert np.bincount(s.pool._oracle_view()).tolist() == [7] * 4
    assert np.bincount(s.test.labels).tolist() == [5] * 4
    assert (s.pool.labels == data.NO_LABEL).all()
    all_ids = np.concatenate([s.train.ids, s.pool.ids, s.test.ids])
    assert np.unique(all_ids).size == all_ids.size


def test_all_ones_is_balanced():
    s = data.generate_synthetic(SkewProfile(head_count=20, multipliers=(1, 1, 1), feature_dim=2))
    np.testing.assert_allclose(data.compute_catalog(s.train).skewness_ratios, 1.0)


def test_generation_is_reproducible():
    a, b = data.generate_synthetic(SMALL), data.generate_synthetic(SMALL)
    assert data.dumps_csv(a.train) == data.dumps_csv(b.train)
    assert data.dumps_csv(a.pool) == data.dumps_csv(b.pool)


def test_seed_changes_features_not_counts():
    from dataclasses import replace
    a = data.generate_synthetic(SMALL)
    b = data.generate_synthetic(replace(SMALL, seed=12))
    assert not np.array_equal(a.train.features, b.train.features)
    assert np.bincount(a.train.labels).tolist() == np.bincount(b.train.labels).tolist()


def test_round_half_up_and_zero_count_error():
    # 500 * 0.003 = 1.5 rounds up to 2; 150 * 0.003 = 0.45 rounds to 0
    assert SkewProfile(head_count=500, multipliers=(1, 0.003)).train_counts() == [500, 2]
    with pytest.raises(InvalidProfileError, match="class 1"):
        SkewProfile(head_count=150, multipliers=(1, 0.003)).train_counts()


def test_center_separation_holds():
    rng = np.random.default_rng(0)
    c = data._draw_centers(SkewProfile(cluster_separation=5.0, noise_scale=0.5), rng)
    d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
    assert d[~np.eye(len(c), dtype=bool)].min() >= 2.5


def test_impossible_separation_errors():
    with pytest.raises(InvalidProfileError, match="1000 attempts"):
        data.generate_synthetic(SkewProfile(head_count=5, multipliers=(1,) * 30, feature_dim=1,
                                            cluster_separation=50.0))


@pytest.mark.parametrize("kw", [dict(head_count=0), dict(multipliers=(1, 0)), dict(multipliers=(1, 1.5)),
                                dict(cluster_separation=0), dict(noise_scale=-1)])
def test_invalid_profiles(kw):
    with pytest.raises(InvalidProfileError):
        SkewProfile(**kw)


# --- CSV ------------------------------------------------------------------------


def test_csv_round_trip_generated(tmp_path):
    s = data.generate_synthetic(SMALL)
    for ds in (s.train, s.pool, s.test):
        path = tmp_path / f"{ds.role.value}.csv"
        data.save_csv(ds, path)
        back = data.load_csv(path, ds.role, ds.num_classes)
        assert back == ds


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31), st.booleans())
def test_csv_round_trip_property(n, d, seed, with_dets):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, d)) * 10.0 ** rng.integers(-300, 300, size=(n, d))
    dets = None
    if with_dets:
        dets = [DetectionSet(rng.normal(size=(k, 3)), rng.uniform(size=k)) for k in rng.integers(0, 3, size=n)]
    ds = Dataset(rng.permutation(1000)[:n], feats, rng.integers(0, 3, size=n), "train", 3, (), dets)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.csv")
        data.save_csv(ds, path)
        assert data.load_csv(path, "train", 3) == ds


def test_short_row_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,label,f0,f1,f2,f3\n0,1,1,2,3,4\n1,0,1,2,3\n")
    with pytest.raises(ParseError) as info:
        data.load_csv(p)
    assert info.value.line == 3 and "bad.csv:3:" in str(info.value)


def test_duplicate_id_and_unknown_column(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("id,label,f0\n0,1,1\n0,0,2\n")
    with pytest.raises(ParseError, match="duplicate id"):
        data.load_csv(p)
    q = tmp_path / "col.csv"
    q.write_text("id,label,f0,colour\n0,1,1,red\n")
    with pytest.raises(ParseError, match="unknown column"):
        data.load_csv(q)


def test_pool_without_labels_has_no_oracle(tmp_path):
    p = tmp_path / "pool.csv"
    p.write_text("id,label,f0,f1\n" + "".join(f"{i},,{i}.5,-{i}\n" for i in range(5)))
    ds = data.load_csv(p, num_classes=3)
    assert ds.role is SplitRole.POOL
    assert not ds.is_labeled and not ds.has_oracle
    with pytest.raises(InvalidInputError):
        ds._oracle_view()


def test_without_oracle_strips_labels():
    pool = data.generate_synthetic(SMALL).pool
    stripped = pool.without_oracle()
    assert pool.has_oracle and not stripped.has_oracle
    assert np.array_equal(stripped.features, pool.features)
    assert "oracle_label" not in data.dumps_csv(stripped).splitlines()[0]


# --- augment ----------------------------------------------------------------------


def test_augment_empty_is_identity():
    train = labelled([3, 1])
    empty = Dataset(np.zeros(0, int), np.zeros((0, 2)), np.zeros(0, int), "train", 2)
    assert data.augment(train, empty) is train


def test_augment_counts_and_ratio_crossing():
    train = labelled([10, 2])
    assert data.compute_catalog(train).skewness_ratios[1] == pytest.approx(2 / 6)
    mined = Dataset(np.arange(100, 110), np.zeros((10, 2)), np.ones(10, int), "train", 2)
    cat = data.compute_catalog(data.augment(train, mined))
    assert cat.counts.tolist() == [10, 12]
    # mean 11, so 12/11 > 1
    assert cat.skewness_ratios[1] == pytest.approx(12 / 11)


def test_augment_id_collision():
    train = labelled([2, 2])
    mined = Dataset([0], np.zeros((1, 2)), [1], "train", 2)
    with pytest.raises(InvalidInputError, match="collide"):
        data.augment(train, mined)


def test_manifest_records_profile():
    s = data.generate_synthetic(SMALL)
    m = data.manifest(SMALL, s)
    assert m["seed"] == 11 and m["tail_classes"] == [3]
    assert m["counts"]["train"] == [60, 60, 60, 6]
