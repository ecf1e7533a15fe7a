"""Seed-stream derivation: same path gives the same stream, any path change
gives an independent one, and composite (tuple) path elements flatten."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ftlk import seeding
from ftlk.seeding import rng_for


def test_same_path_same_stream():
    a = rng_for(42, seeding.DATA, 3).standard_normal(8)
    b = rng_for(42, seeding.DATA, 3).standard_normal(8)
    assert np.array_equal(a, b)


def test_different_tag_different_stream():
    a = rng_for(42, seeding.DATA, 3).standard_normal(8)
    b = rng_for(42, seeding.DATA, 4).standard_normal(8)
    c = rng_for(42, seeding.TRAIN, 3).standard_normal(8)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_different_seed_different_stream():
    a = rng_for(1, seeding.INIT).standard_normal(8)
    b = rng_for(2, seeding.INIT).standard_normal(8)
    assert not np.array_equal(a, b)


def test_tuple_tags_flatten():
    flat = rng_for(7, 1, 2, 3).standard_normal(4)
    nested = rng_for(7, (1, 2), 3).standard_normal(4)
    assert np.array_equal(flat, nested)


def test_composite_seed_flattens():
    a = rng_for((5, 11), seeding.EVAL).standard_normal(4)
    b = rng_for(5, 11, seeding.EVAL).standard_normal(4)
    assert np.array_equal(a, b)


def test_negative_ints_accepted():
    a = rng_for(-1, 0).standard_normal(4)
    b = rng_for(-1, 0).standard_normal(4)
    assert np.array_equal(a, b)


@given(st.lists(st.integers(min_value=-2**63, max_value=2**63 - 1),
                min_size=1, max_size=6),
       st.integers(min_value=0, max_value=4))
@settings(max_examples=60, derandomize=True)
def test_any_nesting_flattens_identically(path, split):
    split = min(split, len(path) - 1)
    seed, tags = path[0], tuple(path[1:])
    grouped = (seed, *(tags[:split],), *tags[split:]) if tags else (seed,)
    a = rng_for(seed, *tags).standard_normal(4)
    b = rng_for(grouped[0], *grouped[1:]).standard_normal(4)
    assert np.array_equal(a, b)


@given(st.lists(st.integers(min_value=0, max_value=2**32 - 1),
                min_size=2, max_size=5, unique=True))
@settings(max_examples=60, derandomize=True)
def test_sibling_streams_differ(tags):
    streams = [rng_for(9, t).standard_normal(6) for t in tags]
    for i in range(len(streams) - 1):
        assert not np.array_equal(streams[i], streams[i + 1])
