"""Counter-based stream tests: replayability, fixed words-per-value, split
independence, and distributional sanity of the derived draws."""

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from gauda.rng import RngStream


def test_same_state_same_draws():
    a = RngStream(123, 7)
    b = RngStream(123, 7)
    np.testing.assert_array_equal(a.uniform((50,)), b.uniform((50,)))
    np.testing.assert_array_equal(a.gaussian((50,)), b.gaussian((50,)))
    np.testing.assert_array_equal(a.integers(10, (50,)), b.integers(10, (50,)))


def test_counter_restore_replays_tail():
    s = RngStream(9, 3)
    s.uniform((17,))
    mark = s.counter
    tail = s.gaussian((8,))
    np.testing.assert_array_equal(RngStream(9, 3, mark).gaussian((8,)), tail)


def test_uniform_consumes_one_word_per_value():
    s = RngStream(0)
    s.uniform((13,))
    assert s.counter == 13
    s.uniform()
    assert s.counter == 14


def test_gaussian_consumes_two_words_per_value():
    s = RngStream(0)
    s.gaussian((13,))
    assert s.counter == 26


@given(st.integers(0, 2**32), st.integers(1, 40), st.integers(0, 40))
@settings(max_examples=50, deadline=None)
def test_batching_does_not_change_the_sequence(seed, n_first, n_rest):
    whole = RngStream(seed).uniform((n_first + n_rest,))
    split = RngStream(seed)
    parts = np.concatenate([split.uniform((n_first,)), split.uniform((n_rest,))])
    np.testing.assert_array_equal(whole, parts)


@given(st.integers(0, 2**32), st.integers(1, 20), st.integers(0, 20))
@settings(max_examples=50, deadline=None)
def test_gaussian_batching_invariance(seed, n_first, n_rest):
    whole = RngStream(seed).gaussian((n_first + n_rest,))
    split = RngStream(seed)
    parts = np.concatenate([split.gaussian((n_first,)), split.gaussian((n_rest,))])
    np.testing.assert_array_equal(whole, parts)


def test_spawn_is_pure_and_reproducible():
    parent = RngStream(5)
    before = parent.counter
    c1 = parent.spawn(4)
    c2 = parent.spawn(4)
    assert parent.counter == before
    assert (c1.seed, c1.stream_id, c1.counter) == (c2.seed, c2.stream_id, c2.counter)
    np.testing.assert_array_equal(c1.uniform((20,)), c2.uniform((20,)))


@given(st.integers(0, 2**16), st.integers(0, 500), st.integers(0, 500))
@settings(max_examples=50, deadline=None)
def test_distinct_tags_give_distinct_streams(seed, tag_a, tag_b):
    if tag_a == tag_b:
        return
    a = RngStream(seed).spawn(tag_a).uniform((8,))
    b = RngStream(seed).spawn(tag_b).uniform((8,))
    assert not np.array_equal(a, b)


def test_split_matches_spawn_by_index():
    parent = RngStream(77, 2)
    children = parent.split(5)
    for i, child in enumerate(children):
        assert child.stream_id == parent.spawn(i).stream_id


def test_uniform_range_and_moments():
    u = RngStream(2024).uniform((100_000,))
    assert np.all(u >= 0.0) and np.all(u < 1.0)
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1.0 / 12.0) < 0.002


def test_gaussian_moments():
    z = RngStream(31).gaussian((100_000,))
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.02
    # tails exist but are not wild
    assert 3.9 < np.abs(z).max() < 6.5


def test_sibling_streams_are_uncorrelated():
    root = RngStream(404)
    a = root.spawn(0).uniform((100_000,))
    b = root.spawn(1).uniform((100_000,))
    rho = np.corrcoef(a, b)[0, 1]
    assert abs(rho) < 0.02


def test_integers_bounds_and_uniformity():
    v = RngStream(6).integers(7, (70_000,))
    assert v.min() >= 0 and v.max() < 7
    counts = np.bincount(v, minlength=7)
    assert scipy.stats.chisquare(counts).pvalue > 0.01


def test_integers_rejects_nonpositive_bound():
    with pytest.raises(ValueError):
        RngStream(0).integers(0)


def test_weighted_indices_match_weights():
    w = np.array([0.5, 0.25, 0.125, 0.125])
    draws = RngStream(13).weighted_indices(w, 80_000)
    counts = np.bincount(draws, minlength=4)
    assert scipy.stats.chisquare(counts, f_exp=w * 80_000).pvalue > 0.01


def test_weighted_indices_never_pick_zero_weight():
    w = np.array([1.0, 0.0, 3.0])
    draws = RngStream(8).weighted_indices(w, 20_000)
    assert not np.any(draws == 1)


@pytest.mark.parametrize("bad", [
    np.array([]), np.array([-1.0, 2.0]), np.array([0.0, 0.0]),
    np.array([np.inf, 1.0]), np.ones((2, 2)),
])
def test_weighted_indices_rejects_bad_weights(bad):
    with pytest.raises(ValueError):
        RngStream(0).weighted_indices(bad, 5)


@given(st.integers(0, 2**32), st.integers(1, 60))
@settings(max_examples=50, deadline=None)
def test_shuffle_is_a_permutation(seed, n):
    perm = RngStream(seed).shuffle(n)
    assert sorted(perm.tolist()) == list(range(n))


def test_shuffle_determinism_and_variety():
    first = RngStream(55).shuffle(30)
    np.testing.assert_array_equal(first, RngStream(55).shuffle(30))
    assert not np.array_equal(first, RngStream(56).shuffle(30))
