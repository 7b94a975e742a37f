import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from tzsim import rng


def test_uniform_is_pure_function_of_counters():
    a = rng.uniform(7, rng.TAG_TEST, np.arange(10), 3, 1)
    b = rng.uniform(7, rng.TAG_TEST, np.arange(10), 3, 1)
    assert np.array_equal(a, b)


def test_batch_matches_scalar_draws():
    batch = rng.uniform(5, rng.TAG_CHAIN, np.arange(50), 12, 0)
    singles = [rng.uniform_scalar(5, rng.TAG_CHAIN, e, 12) for e in range(50)]
    assert batch.tolist() == singles


def test_chunking_does_not_change_draws():
    ids = np.arange(1000)
    whole = rng.uniform(3, rng.TAG_DIRECTION, ids, 4)
    parts = np.concatenate([rng.uniform(3, rng.TAG_DIRECTION, chunk, 4) for chunk in np.array_split(ids, 7)])
    assert np.array_equal(whole, parts)


@given(st.integers(-(2**62), 2**62), st.integers(0, 2**40), st.integers(0, 2**30))
def test_uniform_range(seed, entity, step):
    u = rng.uniform_scalar(seed, rng.TAG_TEST, entity, step)
    assert 0.0 <= u < 1.0


def test_counters_separate_streams():
    base = rng.uniform(1, rng.TAG_TEST, np.arange(1000), 0, 0)
    for other in (
        rng.uniform(2, rng.TAG_TEST, np.arange(1000), 0, 0),
        rng.uniform(1, rng.TAG_CSSO, np.arange(1000), 0, 0),
        rng.uniform(1, rng.TAG_TEST, np.arange(1000), 1, 0),
        rng.uniform(1, rng.TAG_TEST, np.arange(1000), 0, 1),
    ):
        assert not np.any(base == other)
        assert abs(np.corrcoef(base, other)[0, 1]) < 0.1


def test_uniform_moments():
    u = rng.uniform(11, rng.TAG_TEST, np.arange(200_000), 0)
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1 / 12) < 0.002


def test_standard_normal_moments():
    z = rng.standard_normal(11, rng.TAG_TEST, np.arange(200_000), 0)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    assert np.all(np.isfinite(z))
