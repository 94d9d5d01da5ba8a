import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdh.data import Dataset
from bsdh.errors import DataError
from bsdh.triplets import enumerate_triplets, max_triplet_count, sample_batch


def labelled(counts, dim=2):
    labels = np.repeat(np.arange(len(counts)), counts)
    return Dataset(np.zeros((len(labels), dim)), labels)


def brute_triplets(labels):
    n = len(labels)
    return {(a, p, m) for a, p, m in itertools.product(range(n), repeat=3)
            if a != p and labels[a] == labels[p] and labels[m] != labels[a]}


def test_max_triplet_count_examples():
    assert max_triplet_count(2, 2) == 8
    assert max_triplet_count(10, 20) == 684_000
    with pytest.raises(DataError):
        max_triplet_count(2, 1)
    with pytest.raises(DataError):
        max_triplet_count(1, 5)


def test_enumeration_matches_brute_force():
    labels = np.array([0, 1, 0, 2, 1, 0])
    rel = labels[:, None] == labels[None, :]
    got = {tuple(t) for t in enumerate_triplets(rel)}
    assert got == brute_triplets(labels)


def test_two_by_two_gives_all_eight():
    ds = labelled([2, 2])
    batch = sample_batch(ds, k_hat=2, o_hat=2, triplet_budget=100, seed=0)
    assert batch.triplets.shape == (8, 3)
    assert batch.pool_size == 8
    labs = ds.labels[batch.image_ids]
    assert {tuple(t) for t in batch.triplets} == brute_triplets(labs)


def test_budget_one():
    ds = labelled([5, 5, 5])
    batch = sample_batch(ds, k_hat=3, o_hat=4, triplet_budget=1, seed=3)
    assert batch.triplets.shape == (1, 3)
    a, p, n = ds.labels[batch.image_ids[batch.triplets[0]]]
    assert a == p != n
    assert batch.triplets[0, 0] != batch.triplets[0, 1]


def test_same_seed_identical_batch():
    ds = labelled([30, 30, 30, 30])
    a = sample_batch(ds, 3, 10, 500, seed=11)
    b = sample_batch(ds, 3, 10, 500, seed=11)
    for f in ("image_ids", "triplets", "S", "L"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_pool_size_formula():
    ds = labelled([25] * 10)
    batch = sample_batch(ds, k_hat=10, o_hat=20, triplet_budget=1000, seed=0)
    assert batch.pool_size == 684_000
    assert len(batch.triplets) == 1000
    assert len(np.unique(batch.triplets, axis=0)) == 1000


def test_insufficient_labels_names_deficit():
    ds = labelled([3, 3, 1])
    with pytest.raises(DataError, match="short by 2"):
        sample_batch(ds, k_hat=4, o_hat=2)


def test_small_category_contributes_all():
    ds = labelled([3, 50])
    batch = sample_batch(ds, k_hat=2, o_hat=10, triplet_budget=10_000, seed=0)
    assert np.sum(ds.labels[batch.image_ids] == 0) == 3
    assert batch.M == 13


def test_every_image_used_when_budget_large():
    ds = labelled([6, 6, 6])
    batch = sample_batch(ds, 3, 6, 10**6, seed=4)
    assert set(np.unique(batch.triplets)) == set(range(batch.M))


def test_negatives_per_pair_mode():
    ds = labelled([5, 5, 5])
    batch = sample_batch(ds, 3, 5, 10**6, seed=2, negatives_per_pair=1)
    assert len(batch.triplets) == 3 * 5 * 4
    labs = ds.labels[batch.image_ids]
    t = batch.triplets
    assert np.all(labs[t[:, 0]] == labs[t[:, 1]])
    assert np.all(labs[t[:, 0]] != labs[t[:, 2]])


def test_coverage_approaches_full_enumeration():
    ds = labelled([3, 3])
    seen = set()
    full = brute_triplets(ds.labels)
    for seed in range(200):
        b = sample_batch(ds, 2, 3, triplet_budget=4, seed=seed)
        seen |= {tuple(b.image_ids[t]) for t in b.triplets}
    assert seen == full


def test_multi_label_constraints():
    tags = [{"a"}, {"a", "b"}, {"b"}, {"c"}, {"c", "d"}, {"d"}, {"a", "d"}]
    ds = Dataset(np.zeros((7, 2)), tags, multi_label=True)
    batch = sample_batch(ds, k_hat=3, o_hat=3, triplet_budget=10_000, seed=1)
    assert len(set(batch.image_ids.tolist())) == batch.M
    for a, p, n in batch.triplets:
        ta, tp, tn = (ds.labels[batch.image_ids[i]] for i in (a, p, n))
        assert ta & tp and not ta & tn and a != p
    np.testing.assert_allclose(np.diag(batch.S), 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6), st.integers(2, 8), st.integers(1, 3000))
def test_sampled_triplets_obey_labels(seed, k, o, budget):
    rng = np.random.default_rng(seed)
    ds = labelled(rng.integers(2, 12, 7))
    batch = sample_batch(ds, k, o, budget, seed=seed)
    labs = ds.labels[batch.image_ids]
    t = batch.triplets
    assert 1 <= len(t) <= budget
    assert np.all(t[:, 0] != t[:, 1])
    assert np.all(labs[t[:, 0]] == labs[t[:, 1]])
    assert np.all(labs[t[:, 0]] != labs[t[:, 2]])
    assert np.array_equal(batch.L.sum(axis=1), np.zeros(batch.M))
