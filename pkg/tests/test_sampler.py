import numpy as np
import pytest

from fedquad.errors import DataError
from fedquad.sampler import batch_iter, build_class_index, sample_epoch_quadruplets


def check_rows(labels, rows):
    la = labels[rows.anchor_idx]
    return {
        "positive_class": int((labels[rows.positive_idx] != la).sum()),
        "positive_is_anchor": int((rows.positive_idx == rows.anchor_idx).sum()),
        "neg1_class": int((labels[rows.neg1_idx] == la).sum()),
        "neg2_class": int((labels[rows.neg2_idx] == la).sum()),
        "negatives_same_class": int((labels[rows.neg1_idx] == labels[rows.neg2_idx]).sum()),
    }


def test_million_rows_without_violations():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(5), [2, 3, 50, 200, 745])
    labels = labels[rng.permutation(labels.shape[0])]
    index = build_class_index(labels)
    totals = dict.fromkeys(check_rows(labels, sample_epoch_quadruplets(index, 0)), 0)
    rows_seen = 0
    for epoch in range(1000):
        rows = sample_epoch_quadruplets(index, epoch)
        for k, v in check_rows(labels, rows).items():
            totals[k] += v
        assert not rows.degenerate_positive.any()
        assert not rows.degenerate_negative.any()
        assert not rows.no_negative.any()
        rows_seen += len(rows)
    assert rows_seen == 1_000_000
    assert all(v == 0 for v in totals.values()), totals


def test_every_sample_anchors_once():
    labels = np.array([0, 1, 2, 0, 1, 2, 2])
    rows = sample_epoch_quadruplets(build_class_index(labels), 5)
    assert sorted(rows.anchor_idx) == list(range(7))
    np.testing.assert_array_equal(rows.anchor_labels, labels[rows.anchor_idx])


def test_deterministic_per_seed():
    index = build_class_index(np.arange(40) % 4)
    a = sample_epoch_quadruplets(index, 9)
    b = sample_epoch_quadruplets(index, 9)
    c = sample_epoch_quadruplets(index, 10)
    for field in ("anchor_idx", "positive_idx", "neg1_idx", "neg2_idx"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    assert not np.array_equal(a.anchor_idx, c.anchor_idx)


def test_singleton_class_flags_only_its_anchor():
    labels = np.array([0, 0, 1, 1, 2, 3, 3])
    rows = sample_epoch_quadruplets(build_class_index(labels), 1)
    single = labels[rows.anchor_idx] == 2
    np.testing.assert_array_equal(rows.degenerate_positive, single)
    np.testing.assert_array_equal(rows.positive_idx[single], rows.anchor_idx[single])
    assert not rows.degenerate_negative.any()
    assert check_rows(labels, rows)["neg1_class"] == 0


def test_two_classes_reuse_negative_class():
    labels = np.array([0, 0, 0, 1, 1, 1, 1])
    rows = sample_epoch_quadruplets(build_class_index(labels), 3)
    assert rows.degenerate_negative.all()
    assert not rows.no_negative.any()
    la = labels[rows.anchor_idx]
    assert (labels[rows.neg1_idx] != la).all()
    np.testing.assert_array_equal(labels[rows.neg1_idx], labels[rows.neg2_idx])
    assert (rows.neg1_idx != rows.neg2_idx).all()


def test_two_classes_with_singleton_negative():
    labels = np.array([0, 0, 0, 1])
    rows = sample_epoch_quadruplets(build_class_index(labels), 0)
    from_zero = labels[rows.anchor_idx] == 0
    np.testing.assert_array_equal(rows.neg1_idx[from_zero], [3, 3, 3])
    np.testing.assert_array_equal(rows.neg2_idx[from_zero], [3, 3, 3])
    assert rows.degenerate_positive[~from_zero].all()


def test_single_class_has_no_negatives():
    labels = np.full(5, 7)
    rows = sample_epoch_quadruplets(build_class_index(labels), 2)
    assert rows.no_negative.all()
    assert not rows.usable.any()
    np.testing.assert_array_equal(rows.neg1_idx, rows.anchor_idx)
    assert rows.flag_counts() == {"degenerate_positive": 0, "degenerate_negative": 5,
                                  "no_negative": 5}


def test_single_sample_client():
    rows = sample_epoch_quadruplets(build_class_index([4]), 0)
    assert len(rows) == 1
    assert rows.degenerate_positive.all() and rows.no_negative.all()


def test_batch_iter_keeps_partial_tail():
    rows = sample_epoch_quadruplets(build_class_index(np.arange(10) % 3), 0)
    sizes = [len(b) for b in batch_iter(rows, 4)]
    assert sizes == [4, 4, 2]
    chunks = list(batch_iter(rows, 4))
    np.testing.assert_array_equal(np.concatenate([c.anchor_idx for c in chunks]), rows.anchor_idx)
    with pytest.raises(DataError):
        list(batch_iter(rows, 0))


def test_empty_labels_rejected():
    with pytest.raises(DataError):
        build_class_index([])


def test_neg1_class_is_uniform_over_other_classes():
    labels = np.repeat(np.arange(3), [100_000, 10, 10])
    rows = sample_epoch_quadruplets(build_class_index(labels), 11)
    first = rows.anchor_labels == 0
    assert first.sum() == 100_000
    neg1 = labels[rows.neg1_idx[first]]
    neg2 = labels[rows.neg2_idx[first]]
    assert abs(np.mean(neg1 == 1) - 0.5) <= 0.01
    assert set(np.unique(neg1)) == {1, 2}
    np.testing.assert_array_equal(neg2, 3 - neg1)
