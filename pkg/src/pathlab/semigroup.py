"""Markov semigroup oracles, the evolutionary semigroup and final value problems.

State functions follow the convention of :mod:`pathlab.functionals`: for d = 1
they receive arrays of scalars, for d > 1 arrays with a trailing axis of size d.
All oracle routines broadcast over arrays of times and states.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .expectation import ExpectationOperator, MCEstimate
from .functionals import Functional, make_eval, shift_functional
from .path_space import Path, TimeGrid


class QuadratureWarning(UserWarning):
    pass


@lru_cache(maxsize=None)
def _hermite(n: int):
    z, w = np.polynomial.hermite.hermgauss(n)
    return z * math.sqrt(2.0), w / math.sqrt(math.pi)


@lru_cache(maxsize=None)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=None)
def _laguerre(n: int):
    return np.polynomial.laguerre.laggauss(n)


class GaussianSemigroup:
    """Heat semigroup [S(t)f](x) = E f(x + sqrt(t) Z), by Gauss-Hermite quadrature."""

    kind = "gaussian"

    def __init__(self, d: int = 1, n_nodes: int = 64):
        self.d = int(d)
        self.n_nodes = int(n_nodes)
        z, w = _hermite(self.n_nodes)
        if self.d == 1:
            self._z, self._w = z, w
        else:
            grids = np.meshgrid(*([z] * self.d), indexing="ij")
            self._z = np.stack([g.ravel() for g in grids], axis=-1)
            wg = np.meshgrid(*([w] * self.d), indexing="ij")
            self._w = np.prod(np.stack([g.ravel() for g in wg]), axis=0)

    def apply(self, t, f: Callable, x):
        """[S(t)f](x); ``t`` and ``x`` broadcast (x has a trailing axis d when d > 1)."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if np.any(t < 0):
            raise ValueError("semigroup time must be nonnegative")
        if self.d == 1:
            y = x[..., None] + np.sqrt(t)[..., None] * self._z
        else:
            y = x[..., None, :] + np.sqrt(t)[..., None, None] * self._z
        return np.asarray(f(y), dtype=float) @ self._w

    def __repr__(self):
        return f"GaussianSemigroup(d={self.d}, n_nodes={self.n_nodes})"


class IdentitySemigroup:
    """S(t)f = f, the Markov restriction of the stopping operator."""

    kind = "identity"

    def __init__(self, d: int = 1):
        self.d = d

    def apply(self, t, f, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape if self.d == 1 else x.shape[:-1])
        return np.broadcast_to(np.asarray(f(x), dtype=float), shape)


def gaussian_apply(t: float, f: Callable, x, n_nodes: int = 64, d: int = 1):
    """Heat-kernel convolution [S(t)f](x); t = 0 returns f(x)."""
    if np.all(np.asarray(t) == 0):
        return np.asarray(f(np.asarray(x, dtype=float)), dtype=float)
    return GaussianSemigroup(d, n_nodes).apply(t, f, x)


class EvolutionarySemigroup:
    """S(t) F = E Theta_t F for functionals of the past."""

    def __init__(self, E: ExpectationOperator):
        self.E = E

    def evo_apply(self, t: float, F: Functional, x: Path, n: int | None = None,
                  stream=("evo",)) -> MCEstimate:
        if t < 0:
            raise ValueError("t must be nonnegative")
        if F.horizon is None or F.horizon > 1e-12:
            raise ValueError(f"evolutionary semigroup acts on functionals with horizon <= 0, "
                             f"got {F.horizon}")
        G = shift_functional(F, t)
        return self.E.apply(G, x, n, stream, until=max(t, 0.0))

    def markov_restrict(self, t: float, f: Callable, x0, n: int | None = None,
                        stream=("markov",)) -> MCEstimate:
        """[S(t)f](x0) via the constant path at x0."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        x = Path.constant(x0, TimeGrid(0.0, self.E.dt, 1))
        return self.evo_apply(t, make_eval(f, 0.0), x, n, stream)


# -- Laplace transform ------------------------------------------------------------

@lru_cache(maxsize=64)
def _exp_simpson_weights(lam: float, T: float, panels: int) -> tuple:
    """Nodes and weights for int_0^T e^{-lam t} g(t) dt with g piecewise quadratic."""
    if panels % 2:
        raise ValueError("Simpson needs an even number of panels")
    h = T / panels
    nodes = np.linspace(0.0, T, panels + 1)
    # moments of e^{-lam s} s^k on [0, 2h], k = 0, 1, 2
    gz, gw = _legendre(20)
    s = h * (gz + 1.0)
    e = np.exp(-lam * s) * gw * h
    m0, m1, m2 = e.sum(), (e * s).sum(), (e * s * s).sum()
    # Lagrange basis on 0, h, 2h
    c0 = (m2 - 3 * h * m1 + 2 * h * h * m0) / (2 * h * h)
    c1 = (2 * h * m1 - m2) / (h * h)
    c2 = (m2 - h * m1) / (2 * h * h)
    w = np.zeros(panels + 1)
    starts = np.arange(0, panels, 2)
    scale = np.exp(-lam * nodes[starts])
    np.add.at(w, starts, c0 * scale)
    np.add.at(w, starts + 1, c1 * scale)
    np.add.at(w, starts + 2, c2 * scale)
    return nodes, w


def _time_quadrature(nodes, weights, values_at, x_size: int, budget: int = 4_000_000):
    """sum_i weights[i] * values_at(nodes[i:j]) accumulated over chunks of nodes."""
    step = max(1, budget // max(1, x_size))
    total = 0.0
    for i in range(0, len(nodes), step):
        total = total + np.tensordot(weights[i:i + step], values_at(nodes[i:i + step]),
                                     axes=(0, 0))
    return total


def default_truncation(lam: float, f_bound: float = 1.0, tol: float = 1e-10) -> float:
    """Smallest T with e^{-lam T} * f_bound / lam <= tol."""
    return max(0.0, math.log(f_bound / (lam * tol)) / lam)


def laplace_resolvent(oracle, lam: float, f: Callable, x, T_trunc: float | None = None,
                      panels: int = 400, rule: str = "simpson", n_nodes: int = 48,
                      f_bound: float = 1.0):
    """R(lam) f (x) = int_0^inf e^{-lam t} [S(t)f](x) dt.

    ``rule="simpson"`` integrates over [0, T_trunc] with composite Simpson
    weights that carry the factor e^{-lam t} exactly. ``rule="laguerre"``
    uses ``n_nodes`` Gauss-Laguerre nodes on the half line.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    x = np.asarray(x, dtype=float)
    xdim = x.ndim if oracle.d == 1 else x.ndim - 1
    if rule == "laguerre":
        s, w = _laguerre(n_nodes)
        nodes, w = s / lam, w / lam
    elif rule == "simpson":
        if T_trunc is None:
            T_trunc = default_truncation(lam, f_bound)
        tail = math.exp(-lam * T_trunc) * f_bound / lam
        if tail > 1e-8:
            warnings.warn(f"Laplace truncation tail bound {tail:.2e} exceeds 1e-8",
                          QuadratureWarning, stacklevel=2)
        nodes, w = _exp_simpson_weights(float(lam), float(T_trunc), int(panels))
    else:
        raise ValueError(f"unknown rule {rule!r}")
    expand = (-1,) + (1,) * xdim
    return _time_quadrature(nodes, w, lambda t: oracle.apply(t.reshape(expand), f, x),
                            x.size * getattr(oracle, "n_nodes", 1))


def resolvent_identity_residual(oracle, f: Callable, x, lam: float = 1.0, mu: float = 2.0,
                                inner_rule: str = "laguerre", inner_nodes: int = 24, **kw):
    """R(lam)f - R(mu)f - (mu - lam) R(lam) R(mu) f at x.

    The composed term applies the outer rule to the function y -> [R(mu)f](y),
    itself evaluated with ``inner_rule`` at every outer node.
    """
    r_lam = laplace_resolvent(oracle, lam, f, x, **kw)
    r_mu = laplace_resolvent(oracle, mu, f, x, **kw)

    def inner(y):
        return laplace_resolvent(oracle, mu, f, y, rule=inner_rule, n_nodes=inner_nodes)

    rr = laplace_resolvent(oracle, lam, inner, x, **kw)
    return r_lam - r_mu - (mu - lam) * rr


def semigroup_law_residual(oracle, f: Callable, t: float, s: float, x):
    """S(t+s)f - S(t)S(s)f at x, the composition done by nested quadrature."""
    return oracle.apply(t + s, f, x) - oracle.apply(t, lambda y: oracle.apply(s, f, y), x)


# -- final value problems -------------------------------------------------------

def _simpson_weights(a: float, b: float, panels: int) -> tuple:
    nodes = np.linspace(a, b, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return nodes, w * (b - a) / (3.0 * panels)


@dataclass
class SourceTerm:
    """phi(r, x). With ``singular_at = c`` the callable gives g and phi = g / sqrt(c - r)."""

    fn: Callable
    singular_at: float | None = None
    sup_hint: float | None = None

    def __call__(self, r, x):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self.fn(r, x), dtype=float)
        if self.singular_at is not None:
            out = out / np.sqrt(self.singular_at - r)
        return out

    def regular_part(self, r, x):
        return np.asarray(self.fn(np.asarray(r, dtype=float), x), dtype=float)

    def check(self, T: float, x_samples) -> None:
        """Integrability surrogate: finite and within the declared bound on [0, T)."""
        end = T if self.singular_at is None else min(T, self.singular_at)
        r = np.linspace(0.0, end, 65)[:-1] if self.singular_at is not None else \
            np.linspace(0.0, T, 65)
        x = np.asarray(x_samples, dtype=float)
        vals = self.regular_part(r[:, None], x[None, :]) if x.ndim == 1 else \
            self.regular_part(r[:, None], x[None])
        if not np.all(np.isfinite(vals)):
            raise ValueError("source term is not finite on the sample grid")
        if self.sup_hint is not None and np.max(np.abs(vals)) > self.sup_hint * (1 + 1e-12):
            raise ValueError(f"source term exceeds its declared bound {self.sup_hint}")


def as_source(phi) -> SourceTerm | None:
    if phi is None or isinstance(phi, SourceTerm):
        return phi
    return SourceTerm(phi)


@dataclass
class FVPSolution:
    """Values u[i, j] = u(t[i], x[j]) of a mild solution on a time-state grid."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    T: float
    f: Callable
    phi: SourceTerm | None
    oracle: object
    panels: int = 400
    residual: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __call__(self, t, x):
        return mild_value(self.oracle, self.f, self.phi, self.T, t, x, self.panels)

    def rows(self):
        res = self.residual if self.residual is not None else np.full(self.u.shape, np.nan)
        for i, ti in enumerate(self.t):
            for j, xj in enumerate(self.x):
                xs = list(np.atleast_1d(xj))
                yield [ti, *xs, self.u[i, j], res[i, j]]

    def header(self):
        if np.ndim(self.x) == 1:
            return ["t", "x", "u", "residual"]
        return ["t", *[f"x{k}" for k in range(self.x.shape[1])], "u", "residual"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([format_float(v) for v in row])


def format_float(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.17g}"


def mild_value(oracle, f: Callable, phi: SourceTerm | None, T: float, t, x,
               panels: int = 400) -> np.ndarray:
    """u(t, x) = [S(T-t)f](x) - int_t^T [S(r-t) phi(r)](x) dr for scalar t, array x."""
    t = float(t)
    x = np.asarray(x, dtype=float)
    if t >= T:
        return np.asarray(f(x), dtype=float)
    u = oracle.apply(T - t, f, x)
    if phi is None:
        return u
    xdim = x.ndim if oracle.d == 1 else x.ndim - 1
    expand = (-1,) + (1,) * xdim
    if phi.singular_at is None:
        r, w = _simpson_weights(t, T, panels)
        rr = r.reshape(expand)
        vals = oracle.apply(rr - t, lambda y: phi(_bcast(rr, y), y), x)
    else:
        c = phi.singular_at
        if abs(c - T) > 1e-12:
            raise ValueError("singular sources must blow up at the final time")
        # r = T - rho^2 turns phi dr into 2 g(r) drho
        rho, w = _simpson_weights(0.0, math.sqrt(T - t), panels)
        rr = (T - rho ** 2).reshape(expand)
        vals = 2.0 * oracle.apply(np.maximum(rr - t, 0.0), lambda y: phi.regular_part(_bcast(rr, y), y), x)
    return u - np.tensordot(w, vals, axes=(0, 0))


def _bcast(r, y):
    # r has shape (N, 1, ...); y carries an extra quadrature axis (and d axis when d > 1)
    extra = np.ndim(y) - np.ndim(r)
    return r.reshape(r.shape + (1,) * extra)


def solve_fvp_mild(oracle, f: Callable, phi=None, T: float = 1.0, t_grid=None, x_grid=None,
                   panels: int = 400) -> FVPSolution:
    """Variation-of-constants solution on ``t_grid`` x ``x_grid``; u(T) = f exactly."""
    phi = as_source(phi)
    t_grid = np.linspace(0.0, T, 33) if t_grid is None else np.asarray(t_grid, dtype=float)
    x_grid = np.linspace(-2.0, 2.0, 41) if x_grid is None else np.asarray(x_grid, dtype=float)
    if phi is not None:
        phi.check(T, x_grid)
    u = np.stack([mild_value(oracle, f, phi, T, ti, x_grid, panels) for ti in t_grid])
    meta = {"oracle": repr(oracle), "time_rule": "simpson", "panels": panels,
            "singular": bool(phi is not None and phi.singular_at is not None)}
    return FVPSolution(t_grid, x_grid, u, T, f, phi, oracle, panels, meta=meta)


# -- strong solutions ------------------------------------------------------------

def heat_generator(u: Callable, t, x, h: float):
    """(1/2) u_xx by the central second difference."""
    return 0.5 * (u(t, x + h) - 2.0 * u(t, x) + u(t, x - h)) / (h * h)


@dataclass
class StrongResidual:
    field: np.ndarray
    coarse_field: np.ndarray
    t: np.ndarray
    x: np.ndarray
    tol: float
    coarse: bool

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.field)))

    @property
    def max_abs_coarse(self) -> float:
        return float(np.max(np.abs(self.coarse_field)))

    @property
    def extrapolated(self) -> np.ndarray:
        # both fields carry O(dt^2 + h^2) errors
        return (4.0 * self.field - self.coarse_field) / 3.0

    @property
    def max_abs_extrapolated(self) -> float:
        return float(np.max(np.abs(self.extrapolated)))

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.tol and not self.coarse


def _residual_field(u, phi, generator, t, x, dt, h):
    T, X = np.meshgrid(t, x, indexing="ij")
    dtu = (u(T + dt, X) - u(T - dt, X)) / (2.0 * dt)
    src = 0.0 if phi is None else phi(T, X)
    return dtu + generator(u, T, X, h) - src


def strong_residual(u: Callable, phi=None, t_points=None, x_points=None, dt: float = 1e-2,
                    h: float = 1e-2, generator: Callable = heat_generator,
                    tol: float = 5e-3) -> StrongResidual:
    """r = D_t u + A u - phi on interior points, at steps (dt, h) and (2dt, 2h).

    ``u(t, x)`` and ``phi(t, x)`` must accept 2-D arrays. A grid-too-coarse
    warning is raised when the two step sizes disagree by more than 10 * tol.
    """
    t = np.asarray(t_points, dtype=float)
    x = np.asarray(x_points, dtype=float)
    fine = _residual_field(u, phi, generator, t, x, dt, h)
    coarse_f = _residual_field(u, phi, generator, t, x, 2 * dt, 2 * h)
    too_coarse = bool(np.max(np.abs(fine - coarse_f)) > 10 * tol)
    if too_coarse:
        warnings.warn("finite difference residual changes by more than 10x tolerance "
                      "between step sizes; grid too coarse", QuadratureWarning, stacklevel=2)
    return StrongResidual(fine, coarse_f, t, x, tol, too_coarse)


def fvp_field(sol: FVPSolution) -> Callable:
    """Vectorized u(t, x) over 2-D arrays for a mild solution."""

    def u(T_, X_):
        T_ = np.asarray(T_, dtype=float)
        X_ = np.asarray(X_, dtype=float)
        out = np.empty(np.broadcast_shapes(T_.shape, X_.shape))
        Tb, Xb = np.broadcast_arrays(T_, X_)
        for ti in np.unique(Tb):
            mask = Tb == ti
            out[mask] = sol(ti, Xb[mask])
        return out

    return u


@dataclass
class PairCheckReport:
    max_violation: float
    tol: float
    witness: tuple

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def __bool__(self):
        return self.passed


def full_generator_pair_check(oracle, f: Callable, g: Callable, t_list, x_list,
                              tol: float = 1e-6, panels: int = 400) -> PairCheckReport:
    """S(t)f - f = int_0^t S(s)g ds on every (t, x) sample."""
    x = np.asarray(x_list, dtype=float)
    worst, witness = 0.0, (None, None)
    for t in t_list:
        s, w = _simpson_weights(0.0, float(t), panels)
        xdim = x.ndim if oracle.d == 1 else x.ndim - 1
        integral = np.tensordot(w, oracle.apply(s.reshape((-1,) + (1,) * xdim), g, x),
                                axes=(0, 0))
        lhs = oracle.apply(t, f, x) - np.asarray(f(x), dtype=float)
        gap = np.abs(lhs - integral)
        j = int(np.argmax(gap))
        if gap.flat[j] > worst:
            worst, witness = float(gap.flat[j]), (float(t), x.flat[j] if oracle.d == 1 else x[j])
    return PairCheckReport(worst, tol, witness)


# -- running maximum -------------------------------------------------------------

def running_max_solution(f: Callable, T: float, n_nodes: int = 64, radius: float = 10.0):
    """u(t, x) = E f(max of x + B on [t, T]) = 2 int_x^inf f(y) p_{T-t}(x, y) dy.

    Computed as 2 int_0^radius f(x + sqrt(T-t) z) phi(z) dz with Gauss-Legendre nodes.
    """
    gz, gw = _legendre(n_nodes)
    z = 0.5 * radius * (gz + 1.0)
    w = 0.5 * radius * gw * 2.0 * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

    def u(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        tau = np.maximum(T - t, 0.0)
        y = x[..., None] + np.sqrt(tau)[..., None] * z
        return np.asarray(f(y), dtype=float) @ w

    return u


def running_max_source(fprime: Callable, T: float) -> SourceTerm:
    """phi(t, x) = -f'(x) / sqrt(2 pi (T - t))."""
    c = 1.0 / math.sqrt(2.0 * math.pi)
    return SourceTerm(lambda r, x: -c * np.asarray(fprime(x), dtype=float) + 0.0 * r,
                      singular_at=T)
