import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathlab.functionals import (AdaptedProcess, check_adapted, constant, make_eval,
                                 make_integral, make_running_max, running_max,
                                 shift_functional, singular_trapezoid_weights)
from pathlab.path_space import Path, TimeGrid, stop_at

CATALOG = {"cos": np.cos, "tanh": np.tanh, "bump": lambda x: np.exp(-x * x)}


def random_path(seed, t0=-2.0, n=96, span=6.0):
    gen = np.random.default_rng(seed)
    return Path(TimeGrid(t0, t0 + span, n), np.cumsum(gen.normal(size=n + 1)) * 0.3)


def test_make_eval_examples(ramp):
    assert make_eval(lambda x: x, 1.0)(ramp) == 1.0
    assert make_eval(lambda x: 3.5 + 0 * x, 0.2)(ramp) == 3.5
    F = make_eval(np.cos, 0.375)
    assert F.horizon == 0.375
    assert F(ramp) == F(stop_at(ramp, 0.375))


def test_shift_functional_examples(ramp):
    F = make_eval(np.cos, 0.3)
    assert shift_functional(F, 0) is F
    G = shift_functional(F, 0.5)
    assert G(ramp) == np.cos(0.8)
    assert G.horizon == pytest.approx(0.8)


def test_make_integral_examples(ramp):
    assert make_integral(lambda x: 1 + 0 * x, 0.2, 0.9)(ramp) == pytest.approx(0.7, abs=1e-14)
    assert make_integral(lambda x: x, 0.0, 1.0)(ramp) == pytest.approx(0.5, abs=1e-12)
    p = random_path(3)
    whole = make_integral(np.cos, -1.0, 2.0)(p)
    split = make_integral(np.cos, -1.0, 0.5)(p) + make_integral(np.cos, 0.5, 2.0)(p)
    assert whole == pytest.approx(split, abs=1e-13)
    with pytest.raises(ValueError):
        make_integral(np.cos, 1.0, 0.0)


def test_running_max_examples(ramp):
    assert make_running_max(lambda x: x, 0.0, 1.0)(ramp) == 1.0
    assert make_running_max(lambda x: 1 + 0 * x, 0.0, 1.0)(ramp) == 1.0
    g = TimeGrid(0.0, 1.0, 10)
    assert make_running_max(lambda x: x, 0.0, 1.0)(Path(g, 5 - np.arange(11.0))) == 5.0


def test_running_max_requires_d1():
    p = Path(TimeGrid(0.0, 1.0, 4), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        running_max(p.as_batch(), 0.0, 1.0)


def test_check_adapted_examples(ramp):
    # horizons off the grid snap down, so adaptedness is checked at node times
    paths = [ramp, random_path(1), random_path(2)]
    assert check_adapted(make_eval(np.cos, 0.5), 0.5, paths)
    rep = check_adapted(make_eval(np.tanh, 1.5), 0.5, paths)
    assert not rep.passed and rep.worst_gap > 0
    assert check_adapted(make_integral(np.cos, 0.0, 0.75), 0.75, paths)
    assert check_adapted(make_running_max(np.tanh, 0.0, 0.75), 0.75, paths)
    with pytest.raises(ValueError):
        check_adapted(make_eval(np.cos, 0.0), 0.0, [])


def test_constant_and_product(ramp):
    F = constant(2.0) * make_eval(lambda x: x, 0.5)
    assert F(ramp) == 1.0
    assert F.horizon == 0.5


def test_adapted_process_sections_are_adapted(ramp):
    V = AdaptedProcess.from_state_function(lambda t, x: np.sin(x) * (1 + t), (0, 1))
    for t in (0.0, 0.3125, 1.0):
        assert check_adapted(V.section(t), t, [ramp, random_path(5)])
    with pytest.raises(ValueError):
        V.section(1.5)


def test_singular_weights_are_exact_on_linear_integrands():
    ts = np.linspace(0.0, 1.0, 9)
    w0, w1 = singular_trapezoid_weights(ts, 1.0)
    assert (w0 + w1).sum() == pytest.approx(2.0, abs=1e-14)
    # int_0^1 s / sqrt(1 - s) ds = 4/3
    assert (w0 * ts[:-1] + w1 * ts[1:]).sum() == pytest.approx(4 / 3, abs=1e-14)


def test_singular_integral_matches_closed_form(ramp):
    # int_0^0.5 cos(s) / sqrt(1 - s) ds on the ramp, checked against a fine reference
    V = AdaptedProcess.from_state_function(lambda t, x: np.cos(x), (0, 1), singular_at=1.0)
    got = V.integrate(ramp.as_batch(), 0.0, 0.5)[0]
    s = np.linspace(0.0, 0.5, 200001)
    y = np.cos(s) / np.sqrt(1 - s)
    ref = float(np.sum((y[1:] + y[:-1]) * np.diff(s)) / 2)
    assert got == pytest.approx(ref, abs=2e-6)


# -- invariants -------------------------------------------------------------------

@given(st.sampled_from(list(CATALOG)), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0),
       st.integers(0, 10_000))
def test_theta_identity(name, s, t, seed):
    f = CATALOG[name]
    p = random_path(seed)
    got = shift_functional(make_eval(f, s), t)(p)
    assert abs(got - f(p(s + t)[0])) <= 1e-12


@given(st.sampled_from(list(CATALOG)), st.floats(0.0, 1.5), st.integers(0, 10_000))
def test_theta_minus_t_reduces_to_time_zero(name, t, seed):
    f = CATALOG[name]
    p = random_path(seed)
    assert abs(shift_functional(make_eval(f, t), -t)(p) - make_eval(f, 0.0)(p)) <= 1e-12


@given(st.floats(-1.0, 1.0), st.integers(0, 10_000))
def test_theta_inverse(t, seed):
    F = make_integral(np.tanh, -0.5, 0.5)
    p = random_path(seed)
    assert abs(shift_functional(shift_functional(F, t), -t)(p) - F(p)) <= 1e-12


@given(st.integers(1, 95), st.integers(0, 10_000))
def test_integral_additivity_at_nodes(k, seed):
    p = random_path(seed)
    a, b = p.grid.t_start, p.grid.t_end
    c = p.grid.time_of(k)
    whole = make_integral(np.cos, a, b)(p)
    parts = make_integral(np.cos, a, c)(p) + make_integral(np.cos, c, b)(p)
    assert abs(whole - parts) <= 1e-12


@given(st.sampled_from(list(CATALOG)), st.floats(-1.5, 3.0), st.integers(0, 10_000))
def test_bounded_catalog_respects_bound(name, t, seed):
    F = make_eval(CATALOG[name], t, bound_hint=1.0)
    assert abs(F(random_path(seed))) <= F.bound_hint
