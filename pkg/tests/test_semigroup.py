import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathlab.expectation import (SDECoefficients, ItoOperator, StoppingOperator, WienerOperator,
                                 check_homogeneity)
from pathlab.functionals import make_eval, make_integral, shift_functional
from pathlab.path_space import Path, TimeGrid, shift, stop
from pathlab.semigroup import (EvolutionarySemigroup, GaussianSemigroup, IdentitySemigroup,
                               QuadratureWarning, SourceTerm, fvp_field,
                               full_generator_pair_check, gaussian_apply, laplace_resolvent,
                               resolvent_identity_residual, running_max_solution,
                               running_max_source, semigroup_law_residual, solve_fvp_mild,
                               strong_residual)

DT = 1 / 256
G = GaussianSemigroup()
XS = np.linspace(-2.0, 2.0, 9)
CATALOG = {"cos": np.cos, "gauss": lambda y: np.exp(-y * y), "tanh": np.tanh}


def within(est, target, z=4.0):
    return abs(est.mean - target) <= z * est.std_error + 1e-12


@pytest.fixture(scope="module")
def SW():
    return EvolutionarySemigroup(WienerOperator(DT, base_seed=21))


# -- evolutionary semigroup ---------------------------------------------------------

def test_evo_apply_examples(SW, ramp):
    F = make_integral(np.cos, -1.0, 0.0)
    assert SW.evo_apply(0.0, F, ramp, 10).mean == pytest.approx(F(ramp), abs=1e-14)
    x0 = Path.constant(0.0, TimeGrid.from_dt(0.0, DT, 1))
    assert within(SW.evo_apply(1.0, make_eval(lambda y: y * y, 0.0), x0, 20000), 1.0)
    S = EvolutionarySemigroup(StoppingOperator(DT))
    F0 = make_eval(np.tanh, 0.0)
    for t in (0.0, 0.3, 1.0):
        assert S.evo_apply(t, F0, ramp).mean == F0(stop(ramp))
        # a general past functional sees the frozen path shifted by t
        assert S.evo_apply(t, F, ramp).mean == pytest.approx(F(shift(stop(ramp), t)), abs=1e-15)
    with pytest.raises(ValueError):
        SW.evo_apply(0.5, make_eval(np.cos, 0.5), ramp, 10)


def test_markov_restrict_examples(SW):
    assert within(SW.markov_restrict(1.0, np.cos, 0.0, 20000), math.exp(-0.5))
    assert SW.markov_restrict(0.7, lambda y: 1.0 + 0 * y, 0.3, 100).mean == 1.0
    S = EvolutionarySemigroup(StoppingOperator(DT))
    assert S.markov_restrict(0.7, np.tanh, 0.3).mean == np.tanh(0.3)
    flat = EvolutionarySemigroup(ItoOperator(SDECoefficients(lambda y: -np.arctan(y), None),
                                             DT))
    assert flat.markov_restrict(0.7, lambda y: 1.0 + 0 * y, 0.3).mean == 1.0


@settings(max_examples=8)
@given(st.floats(0.0, 1.0), st.integers(0, 10))
def test_evolutionary_defining_identity(t, seed):
    x = Path(TimeGrid.from_dt(-1.0, DT, 256), np.sin(np.linspace(0, 3, 257)))
    F = make_integral(np.cos, -0.5, 0.0)
    SW = EvolutionarySemigroup(WienerOperator(DT, base_seed=seed))
    est = SW.evo_apply(t, shift_functional(F, -t), x, 50)
    assert abs(est.mean - F(x)) <= 4 * est.std_error + 1e-13


# -- Gaussian oracle ------------------------------------------------------------------

def test_gaussian_apply_examples():
    for t in (0.1, 1.0, 3.0):
        assert np.max(np.abs(gaussian_apply(t, lambda y: y * y, XS) - (XS ** 2 + t))) <= 1e-10
        assert np.max(np.abs(gaussian_apply(t, np.cos, XS) - math.exp(-t / 2) * np.cos(XS))) \
            <= 1e-8
        assert np.all(gaussian_apply(t, lambda y: 2.5 + 0 * y, XS) == pytest.approx(2.5, abs=1e-15))
    assert np.array_equal(gaussian_apply(0.0, np.cos, XS), np.cos(XS))


def test_gaussian_in_two_dimensions():
    G2 = GaussianSemigroup(d=2, n_nodes=24)
    x = np.array([[0.0, 0.5], [1.0, -1.0]])
    got = G2.apply(0.6, lambda y: np.cos(y[..., 0]) * np.cos(y[..., 1]), x)
    assert np.allclose(got, math.exp(-0.6) * np.cos(x[:, 0]) * np.cos(x[:, 1]), atol=1e-12)


def test_identity_oracle():
    assert np.array_equal(IdentitySemigroup().apply(1.3, np.cos, XS), np.cos(XS))


@pytest.mark.parametrize("name", list(CATALOG))
def test_gaussian_semigroup_law(name):
    f = CATALOG[name]
    for t in (0.1, 0.5, 1.0):
        for s in (0.1, 0.5, 1.0):
            assert np.max(np.abs(semigroup_law_residual(G, f, t, s, XS))) <= 1e-6


def test_mc_semigroup_law_by_nesting(zero_path):
    W = WienerOperator(DT, horizon=1.0, base_seed=5)
    rep = check_homogeneity(W, 0.5, make_eval(np.cos, 0.8), zero_path, 64, 64, 8192)
    assert rep.passed
    assert abs(rep.rhs.mean - math.exp(-0.4)) <= 4 * rep.rhs.std_error


@pytest.mark.parametrize("name", ["cos", "gauss"])
@pytest.mark.parametrize("t", [0.25, 1.0])
def test_markov_consistency_small_budget(SW, name, t):
    f = CATALOG[name]
    for x0 in (-1.0, 0.0, 2.0):
        est = SW.markov_restrict(t, f, x0, 10000, ("consistency", name, t, x0))
        assert within(est, float(gaussian_apply(t, f, x0)))


# -- Laplace transform -----------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_resolvent_of_one(lam):
    one = lambda y: np.ones_like(y)  # noqa: E731
    assert np.max(np.abs(laplace_resolvent(G, lam, one, XS) - 1 / lam)) <= 1e-8
    assert np.max(np.abs(laplace_resolvent(G, lam, one, XS, rule="laguerre") - 1 / lam)) <= 1e-12


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_resolvent_of_cos(lam):
    assert abs(laplace_resolvent(G, lam, np.cos, 0.0) - 1 / (lam + 0.5)) <= 1e-6


def test_resolvent_identity():
    assert np.max(np.abs(resolvent_identity_residual(G, np.cos, [0.0, 1.0]))) <= 1e-5


def test_truncation_warning():
    with pytest.warns(QuadratureWarning):
        laplace_resolvent(G, 1.0, np.cos, 0.0, T_trunc=5.0)
    with pytest.raises(ValueError):
        laplace_resolvent(G, 0.0, np.cos, 0.0)


# -- final value problems --------------------------------------------------------------

T = 1.0
TG = np.linspace(0.0, T, 11)


def test_fvp_heat_final_value():
    sol = solve_fvp_mild(G, np.cos, None, T, TG, XS)
    exact = np.exp(-(T - TG[:, None]) / 2) * np.cos(XS)
    assert np.max(np.abs(sol.u - exact)) <= 1e-6
    assert np.array_equal(sol.u[-1], np.cos(XS))


def test_fvp_constant_source():
    c = 0.7
    sol = solve_fvp_mild(G, lambda y: 0 * y, lambda r, y: -c + 0 * y + 0 * r, T, TG, XS)
    assert np.max(np.abs(sol.u - c * (T - TG[:, None]))) <= 1e-8


def test_fvp_quadratic_source():
    sol = solve_fvp_mild(G, lambda y: 0 * y, lambda r, y: -y * y + 0 * r, T, TG, XS)
    tau = T - TG[:, None]
    assert np.max(np.abs(sol.u - (XS ** 2 * tau + tau ** 2 / 2))) <= 1e-6
    assert np.array_equal(sol.u[-1], np.zeros_like(XS))


def test_fvp_singular_source_matches_reflection_formula():
    src = running_max_source(lambda y: 1 / np.cosh(y) ** 2, T)
    sol = solve_fvp_mild(G, np.tanh, src, T, TG, XS)
    ref = running_max_solution(np.tanh, T)(TG[:, None], XS[None, :])
    assert np.max(np.abs(sol.u - ref)) <= 1e-6
    assert np.array_equal(sol.u[-1], np.tanh(XS))


def test_running_max_solution_against_brownian_reflection():
    # f = identity: E max_{[t,T]} (x + B) = x + sqrt(2 (T - t) / pi)
    u = running_max_solution(lambda y: y, T)
    t = np.array([0.0, 0.5, 0.9])
    assert np.allclose(u(t, 0.3), 0.3 + np.sqrt(2 * (T - t) / np.pi), atol=1e-12)


def test_source_integrability_check():
    bad = SourceTerm(lambda r, y: 5.0 + 0 * y + 0 * r, sup_hint=1.0)
    with pytest.raises(ValueError):
        solve_fvp_mild(G, np.cos, bad, T, TG, XS)


def test_mild_solution_integrated_identity():
    # u(t) = f + A int_t^T u ds - int_t^T phi ds
    phi = lambda r, y: np.sin(y) * r  # noqa: E731
    sol = solve_fvp_mild(G, np.cos, phi, T, [0.0], [0.0])
    u = fvp_field(sol)
    h = 1e-2
    x = np.array([-0.7, 0.0, 0.4])
    for t in (0.0, 0.5):
        s = np.linspace(t, T, 65)
        w = np.full(65, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        w *= (T - t) / 64 / 3

        def integrated(y):
            return np.tensordot(w, u(s[:, None], np.broadcast_to(y, (65, y.size))), axes=(0, 0))

        A_int = 0.5 * (integrated(x + h) - 2 * integrated(x) + integrated(x - h)) / h ** 2
        phi_int = np.tensordot(w, phi(s[:, None], x[None, :]), axes=(0, 0))
        lhs = u(np.full_like(x, t), x)
        assert np.max(np.abs(lhs - (np.cos(x) + A_int - phi_int))) <= 1e-4


# -- strong residual ---------------------------------------------------------------------

TP = np.linspace(0.05, 0.9, 8)


def test_strong_residual_heat():
    u = lambda t, x: np.exp(-(T - t) / 2) * np.cos(x)  # noqa: E731
    assert strong_residual(u, None, TP, XS, 1e-2, 1e-2).max_abs <= 1e-4


def test_strong_residual_polynomial_is_exact():
    u = lambda t, x: x * x + (T - t)  # noqa: E731
    assert strong_residual(u, None, TP, XS, 1e-2, 1e-2).max_abs <= 1e-10


def test_strong_residual_running_max():
    src = running_max_source(lambda y: 1 / np.cosh(y) ** 2, T)
    u = running_max_solution(np.tanh, T)
    res = strong_residual(u, src, np.linspace(0, 0.9, 10), np.linspace(-2, 2, 41))
    assert res.passed and res.max_abs <= 5e-3
    assert res.max_abs_extrapolated < res.max_abs


def test_strong_residual_coarse_warning():
    u = lambda t, x: np.cos(40 * x) * np.exp(-800 * (T - t))  # noqa: E731
    with pytest.warns(QuadratureWarning):
        res = strong_residual(u, None, TP, XS, 5e-2, 5e-2)
    assert not res.passed


# -- generator pairs --------------------------------------------------------------------

def test_pair_check_examples():
    ts, xs = [0.5, 1.0], [-1.0, 0.0, 0.7]
    assert full_generator_pair_check(G, np.cos, lambda y: -0.5 * np.cos(y), ts, xs).passed
    rep = full_generator_pair_check(G, lambda y: 3 + 0 * y, lambda y: 0 * y, ts, xs)
    assert rep.passed and rep.max_violation == 0.0
    rep = full_generator_pair_check(G, np.cos, lambda y: 0.5 * np.cos(y), ts, xs)
    assert not rep.passed
    # S(t)f - f + int S(s) f / 2 = 2 (1 - e^{-t/2}) cos x, largest at t = 1, x = 0
    assert rep.max_violation == pytest.approx(2 * (1 - math.exp(-0.5)), rel=1e-9)
