import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathlab.path_space import (GridMismatchError, NonzeroOriginError, Path, TimeGrid,
                                concat_at_zero, eval_path, path_distance, shift, stop, stop_at,
                                vertical_bump)

SAMPLE = np.linspace(-2.0, 2.0, 101)


def ev(p, times):
    return p.as_batch().eval_many(times)[0, :, 0]


@pytest.fixture
def two_node():
    return Path(TimeGrid(0.0, 1.0, 1), [0.0, 2.0])


def test_eval_interpolates_and_extends(two_node):
    assert eval_path(two_node, 0.5)[0] == 1.0
    assert eval_path(two_node, -5.0)[0] == 0.0
    assert eval_path(two_node, 2.0)[0] == 2.0


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        Path(TimeGrid(0.0, 1.0, 2), [0.0, 1.0])


def test_shift_examples(two_node):
    assert np.array_equal(ev(shift(two_node, 0), SAMPLE), ev(two_node, SAMPLE))
    assert eval_path(shift(two_node, 1.0), 0.0)[0] == 2.0


def test_stop_examples():
    p = Path(TimeGrid(-1.0, 1.0, 2), [3.0, 5.0, 7.0])
    assert eval_path(stop(p), 1.0)[0] == 5.0
    c = Path.constant(4.0, TimeGrid(-1.0, 1.0, 8))
    assert np.array_equal(ev(stop(c), SAMPLE), ev(c, SAMPLE))
    assert np.array_equal(ev(stop(stop(p)), SAMPLE), ev(stop(p), SAMPLE))


def test_stop_at_examples(ramp):
    assert np.array_equal(ev(stop_at(ramp, 0.0), SAMPLE), ev(stop(ramp), SAMPLE))
    assert eval_path(stop_at(ramp, 1.0), 1.5)[0] == 1.0
    past = SAMPLE[SAMPLE <= 0.75]
    assert np.array_equal(ev(stop_at(ramp, 0.75), past), ev(ramp, past))


def test_stop_at_snaps_to_node_below(ramp):
    q = stop_at(ramp, 0.5 + 0.3 / 256)
    assert eval_path(q, 2.0)[0] == 0.5


def test_concat_examples(brownian_path, zero_path):
    past_grid = TimeGrid.from_dt(-1.0, 1 / 256, 256)
    zero_past = Path.constant(0.0, past_grid)
    r = concat_at_zero(zero_past, brownian_path)
    ts = np.linspace(0.01, 1.0, 50)
    assert np.allclose(ev(r, ts), ev(brownian_path, ts), atol=1e-15)
    r = concat_at_zero(Path.constant(3.0, past_grid), zero_path)
    assert np.all(ev(r, np.linspace(0, 5, 11)) == 3.0)
    one = Path.constant(1.0, past_grid)
    half = Path(zero_path.grid, np.linspace(0.0, 0.5, 257))
    assert eval_path(concat_at_zero(one, half), 1.0)[0] == 1.5


def test_concat_errors(zero_path):
    past = Path.constant(0.0, TimeGrid.from_dt(-1.0, 1 / 128, 128))
    with pytest.raises(GridMismatchError):
        concat_at_zero(past, zero_path)
    past = Path.constant(0.0, TimeGrid.from_dt(-1.0, 1 / 256, 256))
    with pytest.raises(NonzeroOriginError):
        concat_at_zero(past, Path.constant(1.0, zero_path.grid))


def test_vertical_bump_examples(ramp):
    q0 = vertical_bump(ramp, 0.5, [1.0], 0.0)
    assert np.array_equal(ev(q0, SAMPLE), ev(stop_at(ramp, 0.5), SAMPLE))
    z = Path.constant(0.0, TimeGrid.from_dt(-1.0, 1 / 256, 512))
    b = vertical_bump(z, 0.0, [1.0], 1.0)
    t = z.grid.times()
    assert np.array_equal(b.values[:, 0], (t >= 0).astype(float))
    q = vertical_bump(ramp, 0.5, [1.0], 0.3)
    before = SAMPLE[SAMPLE < 0.5]
    assert np.array_equal(ev(q, before), ev(stop_at(ramp, 0.5), before))
    assert eval_path(q, 0.5)[0] == pytest.approx(0.8)
    # left limit at the jump is the pre-jump value
    assert q.as_batch().eval_many_left([0.5])[0, 0, 0] == pytest.approx(0.5)


def test_vertical_bump_outside_window(ramp):
    with pytest.raises(ValueError):
        vertical_bump(ramp, 5.0, [1.0], 0.1)


def test_path_distance_examples(ramp):
    g = TimeGrid(0.0, 1.0, 4)
    assert path_distance(ramp, ramp) == 0.0
    assert path_distance(Path.constant(0.0, g), Path.constant(10.0, g)) == 1 - 2.0 ** -20
    other = Path(g, [0.3, -0.2, 1.0, 0.0, 0.5])
    assert path_distance(ramp, other, 7) == path_distance(other, ramp, 7)
    with pytest.raises(ValueError):
        path_distance(ramp, other, 0)


# -- invariants -------------------------------------------------------------------

node_values = st.lists(st.floats(-5, 5), min_size=3, max_size=30)
times = st.floats(-2.0, 2.0)


def _path(vals, t0=-1.0):
    return Path(TimeGrid(t0, t0 + 2.0, len(vals) - 1), vals)


@given(node_values, times, times)
def test_shift_group_law(vals, a, b):
    p = _path(vals)
    assert np.max(np.abs(ev(shift(shift(p, a), b), SAMPLE) - ev(shift(p, a + b), SAMPLE))) \
        <= 1e-12 * (1 + np.max(np.abs(vals)))


@given(node_values, times)
def test_stop_at_idempotent_and_past_preserving(vals, t):
    p = _path(vals)
    q = stop_at(p, t)
    assert np.array_equal(ev(stop_at(q, t), SAMPLE), ev(q, SAMPLE))
    node = p.grid.time_of(p.grid.floor_index(t))
    past = SAMPLE[SAMPLE <= node]
    assert np.array_equal(ev(q, past), ev(p, past))


@given(node_values, st.integers(0, 8))
def test_stop_at_conjugation(vals, k):
    p = _path(vals)
    t = p.grid.time_of(min(k, p.grid.n_steps))
    lhs = ev(stop_at(p, t), SAMPLE)
    rhs = ev(shift(stop(shift(p, t)), -t), SAMPLE)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + np.max(np.abs(vals)))


@given(node_values)
def test_concat_with_zero_future_is_stop(vals):
    n = len(vals) - 1
    p = Path(TimeGrid.from_dt(-1.0, 1 / n, n), vals)
    zero_future = Path.constant(0.0, TimeGrid.from_dt(0.0, 1 / n, n))
    ts = np.linspace(0.0, 3.0, 31)
    assert np.array_equal(ev(concat_at_zero(p, zero_future), ts), ev(stop(p), ts))


@given(node_values, node_values)
def test_distance_in_unit_interval_and_symmetric(a, b):
    p, q = _path(a), _path(b, t0=-0.5)
    d = path_distance(p, q)
    assert 0.0 <= d <= 1.0
    assert d == path_distance(q, p)
