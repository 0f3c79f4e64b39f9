import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from meal.manifold import EmbeddingPoint
from meal.representative import SelectionError, kmeanspp_indices, kmeanspp_select

FOUR = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [4.0, 4.0]])


def _points(coords):
    return [EmbeddingPoint(np.asarray(c, dtype=float)) for c in coords]


def exact_pair_probabilities(x):
    """P({i, j}) for two D^2 draws, by enumerating every ordered chain."""
    m = len(x)
    probs = {}
    for i, j in itertools.permutations(range(m), 2):
        d2 = ((x - x[i]) ** 2).sum(axis=1)
        p = (1.0 / m) * d2[j] / d2.sum()
        key = frozenset((i, j))
        probs[key] = probs.get(key, 0.0) + p
    return probs


def test_oracle_sums_to_one():
    assert sum(exact_pair_probabilities(FOUR).values()) == pytest.approx(1.0, abs=1e-12)


def test_pair_frequencies_match_d2_chain():
    trials = 10_000
    exact = exact_pair_probabilities(FOUR)
    pts = _points(FOUR)
    counts = dict.fromkeys(exact, 0)
    for seed in range(trials):
        counts[frozenset(kmeanspp_select(pts, 2, seed).indices)] += 1
    for pair, p in exact.items():
        se = np.sqrt(p * (1 - p) / trials)
        assert abs(counts[pair] / trials - p) <= 3 * se, (sorted(pair), counts[pair], p)


def test_second_seed_avoids_first_point_duplicates():
    # points {0, 0, 10}: once a zero is chosen, only 10 has positive weight
    pts = _points([[0.0], [0.0], [10.0]])
    seen_first_zero = 0
    for seed in range(200):
        idx = kmeanspp_select(pts, 2, seed).indices
        if idx[0] in (0, 1):
            seen_first_zero += 1
            assert idx[1] == 2
    assert seen_first_zero > 0


def test_two_points_second_draw_is_certain():
    pts = _points([[0.0], [10.0]])
    for seed in range(50):
        idx = kmeanspp_select(pts, 2, seed).indices
        assert sorted(idx) == [0, 1]


def test_exhaustion_returns_everything():
    pts = _points(FOUR)
    sel = kmeanspp_select(pts, 4, 0)
    assert sorted(sel.indices) == [0, 1, 2, 3]
    assert len(kmeanspp_select(pts, 10, 0).chosen) == 4


def test_errors():
    with pytest.raises(SelectionError):
        kmeanspp_select([], 1, 0)
    with pytest.raises(SelectionError):
        kmeanspp_select(_points(FOUR), 0, 0)


def test_chosen_are_input_objects():
    pts = _points(FOUR)
    sel = kmeanspp_select(pts, 3, 5)
    assert all(any(c is p for p in pts) for c in sel.chosen)
    assert sel.rng_seed == 5


@settings(max_examples=60)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 25), st.integers(1, 3)), elements=st.floats(-50, 50)),
    st.integers(1, 30),
    st.integers(0, 2**31 - 1),
)
def test_selection_is_distinct_subset_and_deterministic(x, n, seed):
    idx = kmeanspp_indices(x, n, np.random.default_rng(seed))
    assert len(idx) == min(n, len(x))
    assert len(set(idx)) == len(idx)
    assert all(0 <= i < len(x) for i in idx)
    assert idx == kmeanspp_indices(x, n, np.random.default_rng(seed))


@settings(max_examples=60)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 25), st.just(2)), elements=st.floats(-10, 10)),
    st.integers(1, 10),
    st.sampled_from([0.125, 0.5, 3.0, 1024.0]),
    st.integers(0, 2**31 - 1),
)
def test_scale_equivariance(x, n, lam, seed):
    a = kmeanspp_indices(x, n, np.random.default_rng(seed))
    b = kmeanspp_indices(lam * x, n, np.random.default_rng(seed))
    assert a == b


def test_identical_points_fall_back_to_uniform():
    x = np.ones((6, 2))
    counts = np.zeros(6)
    trials = 3000
    for seed in range(trials):
        idx = kmeanspp_indices(x, 3, np.random.default_rng(seed))
        assert len(set(idx)) == 3
        counts[idx] += 1
    # every point is picked with probability 1/2
    se = np.sqrt(0.25 / trials)
    assert np.all(np.abs(counts / trials - 0.5) <= 4 * se)
