import numpy as np
import pytest

from simpnet.rng import SplitRng


def test_same_seed_bit_identical():
    a = SplitRng(42).uniform((3, 4, 5), -1, 1)
    b = SplitRng(42).uniform((3, 4, 5), -1, 1)
    assert a.tobytes() == b.tobytes()


def test_different_seeds_differ():
    a = SplitRng(1).uniform(100)
    b = SplitRng(2).uniform(100)
    assert not np.array_equal(a, b)


def test_counter_advances_within_stream():
    r = SplitRng(7)
    a = r.uniform(10)
    b = r.uniform(10)
    assert not np.array_equal(a, b)
    # consecutive draws equal one combined draw
    r2 = SplitRng(7)
    both = r2.uniform(20)
    assert np.array_equal(np.concatenate([a, b]), both)


def test_split_is_independent_of_parent_consumption():
    child_before = SplitRng(5).split(3).uniform(8)
    parent = SplitRng(5)
    parent.uniform(100)
    child_after = parent.split(3).uniform(8)
    assert np.array_equal(child_before, child_after)


def test_split_labels_distinguish():
    r = SplitRng(5)
    assert not np.array_equal(r.split(1).uniform(8), r.split(2).uniform(8))
    assert not np.array_equal(r.split(1, 2).uniform(8), r.split(2, 1).uniform(8))


def test_uniform_bounds_and_mean():
    u = SplitRng(3).uniform(10_000, -1, 1)
    assert u.min() >= -1 and u.max() < 1
    assert abs(u.mean()) < 0.05  # law-of-large-numbers check


def test_uniform_degenerate_interval_rejected():
    with pytest.raises(ValueError):
        SplitRng(0).uniform(4, 5, 5)


def test_normal_moments():
    z = SplitRng(11).normal(100_000)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_permutation_is_permutation_and_deterministic():
    p1 = SplitRng(9).permutation(1000)
    p2 = SplitRng(9).permutation(1000)
    assert np.array_equal(p1, p2)
    assert np.array_equal(np.sort(p1), np.arange(1000))


def test_keep_mask_fraction():
    m = SplitRng(13).keep_mask(100_000, 0.3)
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert abs(m.mean() - 0.7) < 0.01


def test_integers_range():
    v = SplitRng(17).integers(1000, 7)
    assert v.min() >= 0 and v.max() < 7
