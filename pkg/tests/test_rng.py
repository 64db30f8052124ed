"""Determinism and independence of the named random streams."""

import numpy as np

from segreward.rng import RngStream


def test_same_seed_same_draws():
    a = RngStream(42).normal(size=16)
    b = RngStream(42).normal(size=16)
    np.testing.assert_array_equal(a, b)


def test_different_seeds_differ():
    a = RngStream(1).normal(size=16)
    b = RngStream(2).normal(size=16)
    assert not np.array_equal(a, b)


def test_fork_names_give_independent_streams():
    root = RngStream(7)
    a = root.fork("left").normal(size=8)
    b = root.fork("right").normal(size=8)
    assert not np.array_equal(a, b)


def test_fork_is_insensitive_to_parent_consumption():
    """Adding draws on the parent must not shift what a child sees."""
    r1 = RngStream(9)
    child_before = r1.fork("c").normal(size=4)
    r2 = RngStream(9)
    r2.normal(size=1000)
    child_after = r2.fork("c").normal(size=4)
    np.testing.assert_array_equal(child_before, child_after)


def test_fork_path_matters_not_just_final_name():
    a = RngStream(3).fork("x").fork("z").normal(size=4)
    b = RngStream(3).fork("y").fork("z").normal(size=4)
    assert not np.array_equal(a, b)


def test_seed_and_path_recorded():
    s = RngStream(5).fork("a").fork("b")
    assert s.seed == 5
    assert s.path == ("a", "b")


def test_draw_helpers_shapes_and_ranges():
    s = RngStream(0).fork("draws")
    ints = s.integers(0, 10, size=100)
    assert ints.min() >= 0 and ints.max() < 10
    u = s.uniform(2.0, 3.0, size=50)
    assert np.all((u >= 2.0) & (u < 3.0))
    perm = s.permutation(np.arange(6))
    assert sorted(perm.tolist()) == list(range(6))
    pick = s.choice(np.arange(4), size=3, replace=False)
    assert len(set(pick.tolist())) == 3
    r = s.random(size=5)
    assert np.all((r >= 0.0) & (r < 1.0))
