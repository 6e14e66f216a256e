import math

import numpy as np
import pytest

from fedquad.errors import PartitionError
from fedquad.partition import (class_histogram, partition_dirichlet, partition_iid,
                               partition_summary)


def labels_for(num_classes=10, per_class=100):
    return np.repeat(np.arange(num_classes), per_class)


def test_disjoint_cover_over_random_triples():
    rng = np.random.default_rng(0)
    labels = labels_for(10, 50)
    for _ in range(100):
        alpha = float(10 ** rng.uniform(-1, 2))
        clients = int(rng.integers(1, 21))
        plan = partition_dirichlet(labels, clients, alpha, seed=int(rng.integers(0, 2 ** 31)))
        assert plan.num_clients == clients
        assert plan.is_exact_cover(labels.shape[0])
        assert all(len(ix) > 0 for ix in plan.client_indices)
        assert all(np.all(np.diff(ix) > 0) for ix in plan.client_indices)


def test_large_alpha_matches_global_proportions():
    labels = labels_for(10, 500)
    plan = partition_dirichlet(labels, 10, 1e6, seed=3)
    hist = class_histogram(plan, labels, 10).to_numpy()
    shares = hist / hist.sum(axis=1, keepdims=True)
    assert np.abs(shares - 0.1).max() <= 0.05


def test_small_alpha_is_skewed():
    labels = labels_for(10, 200)
    plan = partition_dirichlet(labels, 10, 0.05, seed=1)
    summary = partition_summary(plan, labels, 10)
    assert summary["dominant_share"].mean() > 0.5


def test_dirichlet_deterministic_per_seed():
    labels = labels_for(5, 40)
    a = partition_dirichlet(labels, 4, 0.5, seed=11)
    b = partition_dirichlet(labels, 4, 0.5, seed=11)
    assert a.seed == b.seed
    for x, y in zip(a.client_indices, b.client_indices):
        np.testing.assert_array_equal(x, y)


def test_retry_bumps_seed_when_a_client_is_empty():
    labels = labels_for(3, 20)
    seeds = {partition_dirichlet(labels, 8, 0.3, seed=s).seed - s for s in range(20)}
    # 8 clients over 60 skewed samples: many first draws leave a client empty
    assert max(seeds) > 0


def test_unsatisfiable_partitions_raise():
    with pytest.raises(PartitionError):
        partition_dirichlet(np.arange(3), 5, 1.0, seed=0)
    with pytest.raises(PartitionError):
        partition_dirichlet(labels_for(), 3, 0.0, seed=0)
    with pytest.raises(PartitionError):
        partition_iid(np.arange(2), 3, seed=0)


def test_iid_near_equal_sizes():
    plan = partition_iid(labels_for(4, 25), 7, seed=2)
    assert plan.is_exact_cover(100)
    assert plan.sizes.max() - plan.sizes.min() <= 1
    assert math.isinf(plan.alpha)


def test_histogram_and_summary():
    labels = labels_for(3, 10)
    plan = partition_dirichlet(labels, 4, 1.0, seed=5)
    hist = class_histogram(plan, labels, 3)
    assert list(hist.columns) == ["class_0", "class_1", "class_2"]
    assert hist.index.name == "client"
    np.testing.assert_array_equal(hist.sum(axis=0).to_numpy(), [10, 10, 10])
    summary = partition_summary(plan, labels, 3)
    np.testing.assert_array_equal(summary["samples"], plan.sizes)
    assert (summary["classes_present"] <= 3).all()
