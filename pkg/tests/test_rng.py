import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from pathlab import rng


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 2 ** 64 - 1), st.integers(1, 2 ** 63),
       st.integers(0, 2 ** 64 - 1), st.integers(0, 2 ** 64 - 1))
def test_philox_matches_numpy_reference(k0, k1, c0, c1, c2):
    key = np.array([k0, k1], dtype=np.uint64)
    # numpy's bit generator increments its counter before producing a block
    ref = np.random.Philox(key=key, counter=np.array([c0 - 1, c1, c2, 0], dtype=np.uint64))
    got = rng.philox4x64(np.array([[c0, c1, c2, 0]], dtype=np.uint64), key)[0]
    assert np.array_equal(ref.random_raw(4), got)


def test_stream_keys_differ_by_label_and_seed():
    a = rng.stream_key(0, "x", 1)
    assert np.array_equal(a, rng.stream_key(0, "x", 1))
    assert not np.array_equal(a, rng.stream_key(0, "x", 2))
    assert not np.array_equal(a, rng.stream_key(1, "x", 1))


def test_normals_independent_of_chunking_and_offsets():
    key = rng.stream_key(3, "chunks")
    full = rng.standard_normals(key, np.arange(10), 9, 3)
    part = rng.standard_normals(key, np.arange(4, 7), 5, 3, step0=2)
    assert np.array_equal(full[4:7, 2:7], part)


def test_normals_thread_count_does_not_matter():
    key = rng.stream_key(5, "threads")
    before = rng.configure_threads()
    rng.configure_threads(1)
    one = rng.standard_normals(key, np.arange(257), 33, 1)
    rng.configure_threads(before)
    assert np.array_equal(one, rng.standard_normals(key, np.arange(257), 33, 1))


def test_normals_moments():
    z = rng.standard_normals(rng.stream_key(11, "moments"), np.arange(4000), 50, 1).ravel()
    n = z.size
    assert abs(z.mean()) < 4 / np.sqrt(n)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / n)
    assert abs(np.mean(z ** 4) - 3) < 4 * np.sqrt(96 / n)
    # lag-one correlation along the step axis
    zz = rng.standard_normals(rng.stream_key(11, "lag"), np.arange(4000), 50, 1)[..., 0]
    r = np.mean(zz[:, 1:] * zz[:, :-1])
    assert abs(r) < 4 / np.sqrt(zz[:, 1:].size)
