"""Counter-based stream contracts: replay, independence from draw order."""

import numpy as np

from lacvit.rng import RngStream, derive_stream_id


def test_same_address_replays_identically():
    a = RngStream(42, 7, counter=3).normal(0, 1, 16)
    b = RngStream(42, 7, counter=3).normal(0, 1, 16)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = RngStream(42, 1).normal(0, 1, 16)
    b = RngStream(42, 2).normal(0, 1, 16)
    assert not np.array_equal(a, b)


def test_child_derivation_is_by_value_not_consumption():
    parent = RngStream(5, 0)
    first = parent.child("x", 3).uniform(size=4)
    parent.normal(0, 1, 100)  # consuming the parent must not move children
    second = RngStream(5, 0).child("x", 3).uniform(size=4)
    assert np.array_equal(first, second)


def test_derive_stream_id_sensitive_to_every_key():
    base = derive_stream_id("epoch", 3, 14)
    assert base != derive_stream_id("epoch", 3, 15)
    assert base != derive_stream_id("epoch", 4, 14)
    assert base != derive_stream_id("Epoch", 3, 14)


def test_permutation_is_a_permutation():
    perm = RngStream(9, 0).permutation(50)
    assert sorted(perm.tolist()) == list(range(50))


def test_truncated_normal_bounds_and_spread():
    out = RngStream(3, 0).truncated_normal(0.02, 100_000)
    assert np.abs(out).max() <= 0.04
    assert 0.018 < out.std() < 0.022
