"""Bounded functionals on path space and adapted processes.

Functionals are evaluated on whole :class:`~pathlab.path_space.PathBatch`
objects so Monte Carlo code can evaluate thousands of sampled paths per call.
State functions ``f`` receive an array of states: shape ``(m,)`` when d = 1 and
``(m, d)`` otherwise, and must return shape ``(m,)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .path_space import Path, PathBatch, stop_at


def _states(x: np.ndarray) -> np.ndarray:
    # (..., d) -> (...) when d == 1
    return x[..., 0] if x.shape[-1] == 1 else x


def apply_state_fn(f, x: np.ndarray) -> np.ndarray:
    """Call ``f`` on states ``x`` of shape (..., d) and broadcast to shape (...)."""
    out = np.asarray(f(_states(x)), dtype=float)
    return np.broadcast_to(out, x.shape[:-1])


class Functional:
    """A real map on paths; ``horizon`` declares F = F o stop_at(., horizon)."""

    def __init__(self, evaluate_batch: Callable[[PathBatch], np.ndarray],
                 horizon: float | None = None, bound_hint: float | None = None,
                 name: str = "F"):
        self._evaluate_batch = evaluate_batch
        self.horizon = None if horizon is None else float(horizon)
        self.bound_hint = bound_hint
        self.name = name

    def evaluate_batch(self, batch: PathBatch) -> np.ndarray:
        out = np.asarray(self._evaluate_batch(batch), dtype=float)
        return np.broadcast_to(out, (batch.m,))

    def evaluate(self, p: Path) -> float:
        return float(self.evaluate_batch(p.as_batch())[0])

    __call__ = evaluate

    def __mul__(self, other):
        return product(self, other)

    def __repr__(self):
        return f"Functional({self.name}, horizon={self.horizon})"


def _max_horizon(*fs):
    hs = [F.horizon for F in fs]
    return None if any(h is None for h in hs) else max(hs)


def _min_bound(*fs):
    bs = [F.bound_hint for F in fs]
    return None if any(b is None for b in bs) else float(np.prod(bs))


def product(F: Functional, G: Functional) -> Functional:
    return Functional(lambda b: F.evaluate_batch(b) * G.evaluate_batch(b),
                      _max_horizon(F, G), _min_bound(F, G), f"({F.name}*{G.name})")


def absolute(F: Functional) -> Functional:
    return Functional(lambda b: np.abs(F.evaluate_batch(b)), F.horizon, F.bound_hint,
                      f"|{F.name}|")


def constant(c: float) -> Functional:
    return Functional(lambda b: np.full(b.m, float(c)), horizon=-np.inf,
                      bound_hint=abs(float(c)), name=f"{c:g}")


def shift_functional(F: Functional, t: float) -> Functional:
    """Theta_t F: p -> F(shift(p, t)). A declared horizon h becomes h + t."""
    if t == 0:
        return F
    horizon = None if F.horizon is None else F.horizon + t
    return Functional(lambda b: F.evaluate_batch(b.with_grid(b.grid.shifted(t))),
                      horizon, F.bound_hint, f"Theta_{t:g}{F.name}")


def make_eval(f, t: float, bound_hint: float | None = None) -> Functional:
    """p -> f(p(t))."""
    return Functional(lambda b: apply_state_fn(f, b.eval(t)), t, bound_hint,
                      f"eval_{t:g}")


def _segment_times(batch: PathBatch, a: float, b: float) -> np.ndarray:
    times = batch.grid.times()
    inner = times[(times > a) & (times < b)]
    return np.concatenate([[a], inner, [b]])


def _trapezoid(batch: PathBatch, fn, a: float, b: float) -> np.ndarray:
    # fn(times, states (m, n, d)) -> (m, n); segments end at left limits
    ts = _segment_times(batch, a, b)
    right = fn(ts[:-1], batch.eval_many(ts[:-1]))
    left = fn(ts[1:], batch.eval_many_left(ts[1:]))
    return 0.5 * ((right + left) * np.diff(ts)).sum(axis=1)


def make_integral(f, a: float, b: float, bound_hint: float | None = None) -> Functional:
    """p -> int_a^b f(p(s)) ds by the trapezoid rule on the path's own grid."""
    if a > b:
        raise ValueError(f"invalid interval: a={a} > b={b}")
    if a == b:
        return Functional(lambda batch: np.zeros(batch.m), b, 0.0, "int_empty")

    def ev(batch):
        return _trapezoid(batch, lambda ts, x: apply_state_fn(f, x), a, b)

    bound = None if bound_hint is None else bound_hint * (b - a)
    return Functional(ev, b, bound, f"int_{a:g}^{b:g}")


def running_max(batch: PathBatch, t: float, T: float) -> np.ndarray:
    """max of the d = 1 path over [t, T], taken over grid nodes, left limits and endpoints."""
    if batch.d != 1:
        raise ValueError(f"running max needs d = 1, got d = {batch.d}")
    ts = _segment_times(batch, t, T) if T > t else np.array([t])
    vals = batch.eval_many(ts)[:, :, 0].max(axis=1)
    if batch.left is not None and len(ts) > 1:
        vals = np.maximum(vals, batch.eval_many_left(ts[1:])[:, :, 0].max(axis=1))
    return vals


def make_running_max(f, t: float, T: float, bound_hint: float | None = None) -> Functional:
    """p -> f(max_{s in [t, T]} p(s)) for one-dimensional paths."""
    if t > T:
        raise ValueError(f"invalid interval: t={t} > T={T}")
    return Functional(lambda b: np.asarray(f(running_max(b, t, T)), dtype=float), T,
                      bound_hint, f"max_{t:g}^{T:g}")


@dataclass
class AdaptedReport:
    passed: bool
    horizon: float
    worst_gap: float
    worst_index: int
    n_paths: int

    def __bool__(self):
        return self.passed


def check_adapted(F: Functional, t: float, test_paths, tol: float = 1e-10) -> AdaptedReport:
    """Spot check that F(p) == F(stop_at(p, t)) on every test path."""
    test_paths = list(test_paths)
    if not test_paths:
        raise ValueError("check_adapted needs at least one test path")
    gaps = np.array([abs(F.evaluate(p) - F.evaluate(stop_at(p, t))) for p in test_paths])
    worst = int(np.argmax(gaps))
    return AdaptedReport(bool(gaps[worst] <= tol), t, float(gaps[worst]), worst,
                         len(test_paths))


@dataclass
class AdaptedProcess:
    """V(t, path) for t in ``time_window``.

    ``value(t, batch)`` returns shape (m,). Processes built with
    :meth:`from_state_function` also carry ``state_fn(t, x)`` so values at many
    times can be computed in one vectorized call. ``singular_at`` marks an
    integrand of the form g(s, x(s)) / sqrt(singular_at - s) where ``state_fn``
    is the regular factor g.
    """

    value: Callable[[float, PathBatch], np.ndarray]
    time_window: tuple = (0.0, 1.0)
    state_fn: Callable | None = None
    singular_at: float | None = None
    name: str = "V"
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_state_function(cls, u, time_window=(0.0, 1.0), name="u", singular_at=None):
        """V(t, x) = u(t, x(t)), optionally divided by sqrt(singular_at - t)."""

        def value(t, batch):
            out = apply_state_fn(lambda z: u(t, z), batch.eval(t))
            if singular_at is not None:
                out = out / np.sqrt(singular_at - t)
            return out

        return cls(value, tuple(time_window), u, singular_at, name)

    @classmethod
    def from_functionals(cls, section, time_window=(0.0, 1.0), name="V"):
        """Build from ``section(t) -> Functional``."""
        return cls(lambda t, b: section(t).evaluate_batch(b), tuple(time_window), name=name)

    def __call__(self, t: float, p: Path) -> float:
        return float(np.asarray(self.value(t, p.as_batch()))[0])

    def check_window(self, *times):
        lo, hi = self.time_window
        for t in times:
            if not lo - 1e-12 <= t <= hi + 1e-12:
                raise ValueError(f"time {t} outside window [{lo}, {hi}] of {self.name}")

    def section(self, t: float) -> Functional:
        self.check_window(t)
        return Functional(lambda b: self.value(t, b), t, name=f"{self.name}({t:g})")

    def values_at(self, times, batch: PathBatch, left: bool = False) -> np.ndarray:
        """Regular part of the process at several times, shape (m, len(times))."""
        times = np.asarray(times, dtype=float)
        if self.state_fn is not None:
            x = batch.eval_many_left(times) if left else batch.eval_many(times)
            return np.asarray(self.state_fn(times[None, :], _states(x)), dtype=float) \
                * np.ones((batch.m, times.size))
        if self.singular_at is not None:
            raise ValueError("singular processes need a state function")
        return np.stack([self.value(t, batch) for t in times], axis=1)

    def integrate(self, batch: PathBatch, a: float, b: float) -> np.ndarray:
        """Pathwise int_a^b V(s) ds.

        Regular processes use the trapezoid rule on the path grid. With a
        declared singularity the regular factor is interpolated linearly on each
        segment and multiplied by the exact moments of (c - s)^(-1/2).
        """
        if b < a:
            raise ValueError(f"invalid interval [{a}, {b}]")
        if b == a:
            return np.zeros(batch.m)
        ts = _segment_times(batch, a, b)
        g0 = self.values_at(ts[:-1], batch)
        g1 = self.values_at(ts[1:], batch, left=True)
        if self.singular_at is None:
            return 0.5 * ((g0 + g1) * np.diff(ts)).sum(axis=1)
        w0, w1 = singular_trapezoid_weights(ts, self.singular_at)
        return (g0 * w0 + g1 * w1).sum(axis=1)


def singular_trapezoid_weights(ts: np.ndarray, c: float):
    """Weights for int g(s) (c - s)^(-1/2) ds with g linear on each [ts_i, ts_i+1]."""
    ts = np.asarray(ts, dtype=float)
    if ts[-1] > c + 1e-12:
        raise ValueError(f"integration range ends at {ts[-1]} beyond the singularity {c}")
    ra = np.sqrt(np.maximum(c - ts[:-1], 0.0))
    rb = np.sqrt(np.maximum(c - ts[1:], 0.0))
    # with r = sqrt(c - s): moments of 1 and (s - a) over a segment
    m0 = 2.0 * (ra - rb)
    m1 = (ra ** 2) * m0 - (2.0 / 3.0) * (ra ** 3 - rb ** 3)
    h = np.diff(ts)
    w1 = m1 / h
    w0 = m0 - w1
    return w0, w1
