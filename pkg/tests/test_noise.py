import numpy as np
import pytest

from zeronoise.core import additive_jumps
from zeronoise.noise import (BROWNIAN, BrownianSource, brownian_increments, derive_stream,
                             jump_event_arrays, jump_events)


def test_stream_determinism_and_distinctness():
    a = derive_stream(42, 0).generator().standard_normal(100)
    b = derive_stream(42, 0).generator().standard_normal(100)
    c = derive_stream(42, 1).generator().standard_normal(100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_moments():
    z = derive_stream(42, 7).generator(BROWNIAN).standard_normal(10 ** 6)
    assert abs(z.mean()) < 0.005
    assert abs(z.var() - 1) < 0.01


def test_stream_independence():
    a = derive_stream(3, 0).generator().standard_normal(10 ** 6)
    b = derive_stream(3, 1).generator().standard_normal(10 ** 6)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.005


def test_brownian_increments():
    inc = brownian_increments(derive_stream(1, 0), 1, 10 ** 6, 1.0)
    assert inc.shape == (10 ** 6, 1)
    assert 0.99 <= inc.var(ddof=1) <= 1.01
    assert brownian_increments(derive_stream(1, 0), 2, 0, 0.1).shape == (0, 2)
    np.testing.assert_array_equal(brownian_increments(derive_stream(1, 0), 2, 50, 0.1),
                                  brownian_increments(derive_stream(1, 0), 2, 50, 0.1))
    with pytest.raises(ValueError):
        brownian_increments(derive_stream(1, 0), 1, 5, 0.0)


def test_chunked_source_matches_one_shot():
    full = brownian_increments(derive_stream(5, 2), 3, 1000, 0.01)
    src = BrownianSource(derive_stream(5, 2), 3, 0.01)
    parts = np.concatenate([src.take(n) for n in (1, 7, 300, 692)])
    np.testing.assert_array_equal(full, parts)


def test_jump_events_empty_catalogue():
    assert jump_events(derive_stream(0, 0), None, 10.0) == []


def test_single_atom_event_count():
    cat = additive_jumps([[1.0]], [2.0])
    times, _ = jump_event_arrays(derive_stream(11, 0), cat, 1e4)
    assert 19400 <= times.size <= 20600
    assert np.all(np.diff(times) >= 0) and times[-1] <= 1e4


def test_two_atom_mark_fraction():
    cat = additive_jumps([[1.0], [-1.0]], [1.0, 3.0])
    events = jump_events(derive_stream(12, 0), cat, 1e4)
    frac = np.mean([mark[0] == -1.0 for _, mark in events])
    assert abs(frac - 0.75) < 0.02


def test_jump_events_reproducible():
    cat = additive_jumps([[1.0], [-1.0]], [1.0, 3.0])
    a = jump_event_arrays(derive_stream(9, 4), cat, 50.0)
    b = jump_event_arrays(derive_stream(9, 4), cat, 50.0)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
