"""Expectation operators on path space and their conditional versions.

Every operator continues a given past path beyond a conditioning time ``t``:

* :class:`StoppingOperator` freezes the path,
* :class:`EvolutionOperator` applies a deterministic evolution map,
* :class:`FlowOperator` is the evolution map of an ODE flow (RK4 with a frozen past),
* :class:`WienerOperator` appends Brownian increments,
* :class:`ItoOperator` appends an Euler-Maruyama solution of dX = b dt + sigma dB.

Sampled paths live on the lattice ``{j * dt}``. The Gaussian used by sample ``i``
at lattice step ``j`` is a fixed function of ``(base_seed, stream, i, j)``, so
conditioning at different times reuses the same noise after the conditioning
node (common random numbers) and results never depend on chunking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import rng
from .functionals import Functional
from .path_space import (Path, PathBatch, TimeGrid, batch_path_distance, shift,
                         stop, sup_distance_nodes)

CHUNK = 8192
_SNAP = 1e-9


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int

    @classmethod
    def from_samples(cls, values) -> MCEstimate:
        values = np.asarray(values, dtype=float).ravel()
        n = values.size
        if n == 1:
            return cls(float(values[0]), 0.0, 1)
        return cls(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), n)

    @classmethod
    def exact(cls, value: float) -> MCEstimate:
        return cls(float(value), 0.0, 1)

    def to_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "n_samples": self.n_samples}


def z_score(diff: float, se: float) -> float:
    """|diff| / se, with exact (se = 0) comparisons mapped to 0 or inf."""
    if se > 0:
        return abs(diff) / se
    return 0.0 if abs(diff) <= 1e-12 else math.inf


@dataclass(frozen=True)
class SDECoefficients:
    """Drift ``b(x) -> (m, d)`` and diffusion ``sigma(x) -> (m, d, d)`` for states (m, d).

    Scalar or lower-rank outputs are broadcast, so ``lambda x: -np.arctan(x)``
    and ``lambda x: 1.0`` work for d = 1. ``sigma=None`` means sigma == 0.
    """

    b: Callable
    sigma: Callable | None = None
    d: int = 1
    b_bound: float = math.inf
    sigma_bound: float = math.inf
    lipschitz: float = math.inf

    def drift(self, x: np.ndarray) -> np.ndarray:
        m = x.shape[0]
        return np.broadcast_to(np.asarray(self.b(x), dtype=float), (m, self.d))

    def diffusion(self, x: np.ndarray) -> np.ndarray:
        m = x.shape[0]
        if self.sigma is None:
            return np.zeros((m, self.d, self.d))
        s = np.asarray(self.sigma(x), dtype=float)
        if s.ndim == 2 and self.d == 1:
            s = s[:, :, None]
        return np.broadcast_to(s, (m, self.d, self.d))


def _rk4_flow(drift, x0: np.ndarray, dt: float, n_steps: int, substeps: int) -> np.ndarray:
    out = np.empty((x0.shape[0], n_steps, x0.shape[1]))
    h = dt / substeps
    x = np.array(x0, dtype=float)
    for j in range(n_steps):
        for _ in range(substeps):
            k1 = drift(x)
            k2 = drift(x + 0.5 * h * k1)
            k3 = drift(x + 0.5 * h * k2)
            k4 = drift(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, j] = x
    return out


class ExpectationOperator:
    """Common machinery: lattice alignment, path continuation, sample loops."""

    kind = "abstract"
    stochastic = False

    def __init__(self, dt: float = 1 / 256, horizon: float = 1.0, base_seed: int = 0,
                 d: int | None = None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)
        self.horizon = float(horizon)
        self.base_seed = int(base_seed)
        self.d = d

    # -- subclass hook -----------------------------------------------------
    def _future(self, x0: np.ndarray, step0: int, n_steps: int, key, sample_ids) -> np.ndarray:
        """States at lattice steps step0+1 .. step0+n_steps, shape (m, n_steps, d)."""
        raise NotImplementedError

    # -- lattice helpers ---------------------------------------------------
    def lattice_index(self, t: float) -> int:
        return int(math.floor(t / self.dt + _SNAP))

    def _lattice_past(self, x: Path, k: int):
        """x on lattice nodes lo..k as (values, left, lo)."""
        if self.d is not None and x.d != self.d:
            raise ValueError(f"path dimension {x.d} does not match operator dimension {self.d}")
        g = x.grid
        lo = min(int(math.floor(g.t_start / self.dt + _SNAP)), k)
        aligned = (abs(g.dt - self.dt) <= _SNAP * self.dt and g.has_zero_node())
        if aligned and lo == int(round(g.t_start / self.dt)):
            n_have = g.n_steps + 1
            n_need = k - lo + 1
            values = x.values[:n_need]
            left = None if x.left is None else x.left[:n_need]
            if n_need > n_have:
                pad = np.repeat(x.values[-1:], n_need - n_have, axis=0)
                values = np.concatenate([values, pad])
                if left is not None:
                    left = np.concatenate([left, pad])
            return values, left, lo
        times = np.arange(lo, k + 1) * self.dt
        b = x.as_batch()
        values = b.eval_many(times)[0]
        left = None if x.left is None else b.eval_many_left(times)[0]
        return values, left, lo

    def _n_future(self, k: int, until: float) -> int:
        return max(0, int(math.ceil(until / self.dt - _SNAP)) - k)

    def _assemble(self, past_v, past_l, lo, k, future) -> PathBatch:
        """Batch of paths: past rows (m or 1, k-lo+1, d) followed by future (m, n, d)."""
        m, n_future, d = future.shape
        n_past = past_v.shape[1]
        total = n_past + n_future
        pad = 0
        if total < 2:
            pad = 1
        values = np.empty((m, total + pad, d))
        values[:, :n_past] = past_v
        values[:, n_past:total] = future
        if pad:
            values[:, total:] = values[:, total - 1:total]
        left = None
        if past_l is not None:
            left = values.copy()
            left[:, :n_past] = past_l
        grid = TimeGrid.from_dt(lo * self.dt, self.dt, total + pad - 1)
        return PathBatch(grid, values, left)

    def key(self, stream=()) -> np.ndarray:
        return rng.stream_key(self.base_seed, self.kind, *stream)

    def resolve_until(self, t: float, F: Functional | None, until: float | None) -> float:
        if until is not None:
            return max(until, t)
        if F is None or F.horizon is None:
            return t + self.horizon
        return max(F.horizon, t)

    # -- sampling ----------------------------------------------------------
    def path_chunks(self, t: float, x: Path, n: int, until: float,
                    stream=(), chunk: int = CHUNK) -> Iterator[PathBatch]:
        """Paths equal to x up to (the lattice node at or before) t, continued to ``until``."""
        if t < 0:
            raise ValueError(f"conditioning time must be >= 0, got {t}")
        k = self.lattice_index(t)
        past_v, past_l, lo = self._lattice_past(x, k)
        n_future = self._n_future(k, until)
        past_v = past_v[None]
        past_l = None if past_l is None else past_l[None]
        x0 = past_v[:, -1]
        if not self.stochastic or n_future == 0:
            fut = self._future(x0, k, n_future, None, np.zeros(1, dtype=np.int64))
            yield self._assemble(past_v, past_l, lo, k, fut)
            return
        self._check_budget(n)
        key = self.key(stream)
        for start in range(0, n, chunk):
            ids = np.arange(start, min(n, start + chunk), dtype=np.int64)
            fut = self._future(np.broadcast_to(x0, (ids.size, x0.shape[1])), k, n_future,
                               key, ids)
            yield self._assemble(past_v, past_l, lo, k, fut)

    def extend_batch(self, batch: PathBatch, t: float, until: float, stream,
                     n_rep: int, first_id: int) -> PathBatch:
        """Continue every row of ``batch`` after t, ``n_rep`` times each.

        Row r, repetition j uses sample id ``(first_id + r) * n_rep + j``.
        """
        k = self.lattice_index(t)
        lo = int(round(batch.grid.t_start / self.dt))
        kk = k - lo
        past_v = np.repeat(batch.values[:, :kk + 1], n_rep, axis=0)
        past_l = None
        if batch.left is not None:
            past_l = np.repeat(batch.left[:, :kk + 1], n_rep, axis=0)
        n_future = self._n_future(k, until)
        m = past_v.shape[0]
        ids = (first_id * n_rep + np.arange(m)).astype(np.int64)
        key = self.key(stream) if self.stochastic else None
        fut = self._future(past_v[:, -1], k, n_future, key, ids)
        return self._assemble(past_v, past_l, lo, k, fut)

    def _check_budget(self, n):
        if self.stochastic and (n is None or n < 2):
            raise ValueError(f"stochastic operators need a sample budget n >= 2, got {n}")

    def sample_values(self, t: float, Fs: Sequence[Functional], x: Path, n: int | None,
                      stream=(), until: float | None = None) -> np.ndarray:
        """Per-sample values of several functionals on the same paths, shape (len(Fs), m)."""
        if until is None:
            until = max(self.resolve_until(t, F, None) for F in Fs)
        cols = []
        for batch in self.path_chunks(t, x, n, until, stream):
            cols.append(np.stack([F.evaluate_batch(batch) for F in Fs]))
        return np.concatenate(cols, axis=1)

    def apply(self, F: Functional, x: Path, n: int | None = None, stream=(),
              until: float | None = None) -> MCEstimate:
        """[E F](x)."""
        return self.conditional_apply(0.0, F, x, n, stream, until)

    def conditional_apply(self, t: float, F: Functional, x: Path, n: int | None = None,
                          stream=(), until: float | None = None) -> MCEstimate:
        """[E_t F](x) = [Theta_t E Theta_{-t} F](x)."""
        until = self.resolve_until(t, F, until)
        return MCEstimate.from_samples(self.sample_values(t, [F], x, n, stream, until)[0])

    def nested_values(self, s: float, t: float, F: Functional, x: Path, n_outer: int,
                      n_inner: int, stream=()) -> np.ndarray:
        """Inner means of F given the path at time t, over outer paths continued after s.

        Returns shape (n_outer,): sample i estimates [E_t F] on outer path i.
        """
        until = self.resolve_until(t, F, None)
        if not self.stochastic:
            n_outer = n_inner = 1
        out = []
        outer_chunk = max(1, CHUNK // n_inner)
        first = 0
        for outer in self._outer_chunks(s, t, x, n_outer, tuple(stream) + ("outer",),
                                        outer_chunk):
            inner = self.extend_batch(outer, t, until, tuple(stream) + ("inner",),
                                      n_inner, first)
            vals = F.evaluate_batch(inner).reshape(outer.m, n_inner)
            out.append(vals.mean(axis=1))
            first += outer.m
        return np.concatenate(out)

    def _outer_chunks(self, s, t, x, n_outer, stream, chunk):
        if self._n_future(self.lattice_index(s), t) > 0:
            yield from self.path_chunks(s, x, n_outer, t, stream, chunk=chunk)
            return
        # no randomness between s and t: repeat the single outer path
        base = next(self.path_chunks(s, x, n_outer, t, stream))
        for start in range(0, n_outer, chunk):
            m = min(chunk, n_outer - start)
            left = None if base.left is None else np.repeat(base.left, m, axis=0)
            yield PathBatch(base.grid, np.repeat(base.values, m, axis=0), left)

    def phi(self, x: Path) -> Path:
        """The evolution map realized by a deterministic operator."""
        if self.stochastic:
            raise TypeError(f"{self.kind} operator is not deterministic")
        batch = next(self.path_chunks(0.0, x, 1, self.horizon))
        return batch.path(0)

    def __repr__(self):
        return f"{type(self).__name__}(dt={self.dt:g}, horizon={self.horizon:g})"


class StoppingOperator(ExpectationOperator):
    """F -> F o stop."""

    kind = "stopping"

    def _future(self, x0, step0, n_steps, key, sample_ids):
        return np.repeat(np.asarray(x0)[:, None, :], n_steps, axis=1)


class FlowOperator(ExpectationOperator):
    """Evolution map of x' = b(x) started from x(0), with the past kept frozen."""

    kind = "flow"

    def __init__(self, b: Callable, dt=1 / 256, horizon=1.0, substeps: int = 4, d: int = 1,
                 base_seed: int = 0):
        super().__init__(dt, horizon, base_seed, d)
        self.coeffs = SDECoefficients(b, None, d)
        self.substeps = int(substeps)

    def _future(self, x0, step0, n_steps, key, sample_ids):
        return _rk4_flow(self.coeffs.drift, np.asarray(x0), self.dt, n_steps, self.substeps)


class EvolutionOperator(ExpectationOperator):
    """E F = F o phi for a user supplied map phi: Path -> Path."""

    kind = "evolution"

    def __init__(self, phi: Callable[[Path], Path], dt=1 / 256, horizon=1.0):
        super().__init__(dt, horizon)
        self._phi = phi

    def phi(self, x: Path) -> Path:
        return self._phi(x)

    def path_chunks(self, t, x, n, until, stream=(), chunk=CHUNK):
        yield shift(self._phi(shift(x, t)), -t).as_batch()

    def extend_batch(self, batch, t, until, stream, n_rep, first_id):
        return _stack([shift(self._phi(shift(batch.path(i), t)), -t) for i in range(batch.m)])


def _stack(paths: Sequence[Path]) -> PathBatch:
    g = paths[0].grid
    left = None
    if any(p.left is not None for p in paths):
        left = np.stack([p.values if p.left is None else p.left for p in paths])
    return PathBatch(g, np.stack([p.values for p in paths]), left)


class WienerOperator(ExpectationOperator):
    """F -> E[F(x (+)_0 B)] with a d-dimensional Brownian motion B."""

    kind = "wiener"
    stochastic = True

    def __init__(self, dt=1 / 256, horizon=1.0, base_seed=0, d: int = 1):
        super().__init__(dt, horizon, base_seed, d)

    def _future(self, x0, step0, n_steps, key, sample_ids):
        z = rng.standard_normals(key, sample_ids, n_steps, self.d, step0)
        z *= math.sqrt(self.dt)
        np.cumsum(z, axis=1, out=z)
        z += np.asarray(x0)[:, None, :]
        return z


class ItoOperator(ExpectationOperator):
    """F -> E[F(x (+)_0 X)] with X the Euler-Maruyama solution from x(0).

    With ``coeffs.sigma is None`` the operator is deterministic and the flow is
    integrated with RK4 at ``dt / substeps``.
    """

    kind = "ito"

    def __init__(self, coeffs: SDECoefficients, dt=1 / 256, horizon=1.0, base_seed=0,
                 substeps: int = 4):
        super().__init__(dt, horizon, base_seed, coeffs.d)
        self.coeffs = coeffs
        self.substeps = int(substeps)
        self.stochastic = coeffs.sigma is not None

    def _future(self, x0, step0, n_steps, key, sample_ids):
        x = np.array(x0, dtype=float)
        if not self.stochastic:
            return _rk4_flow(self.coeffs.drift, x, self.dt, n_steps, self.substeps)
        m, d = x.shape
        z = rng.standard_normals(key, sample_ids, n_steps, d, step0)
        z *= math.sqrt(self.dt)
        out = np.empty((m, n_steps, d))
        for j in range(n_steps):
            drift = self.coeffs.drift(x)
            sig = self.coeffs.diffusion(x)
            if d == 1:
                x = x + drift * self.dt + sig[:, :, 0] * z[:, j]
            else:
                x = x + drift * self.dt + np.einsum("mij,mj->mi", sig, z[:, j])
            out[:, j] = x
        return out


# -- axiom checks -------------------------------------------------------------

@dataclass
class CheckReport:
    name: str
    lhs: MCEstimate
    rhs: MCEstimate
    diff: float
    std_error: float
    z_threshold: float = 4.0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return abs(self.diff) <= self.z_threshold * self.std_error + 1e-12

    @property
    def z(self) -> float:
        return z_score(self.diff, self.std_error)

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return {"name": self.name, "lhs": self.lhs.to_dict(), "rhs": self.rhs.to_dict(),
                "diff": self.diff, "std_error": self.std_error, "z": self.z,
                "z_threshold": self.z_threshold, "passed": self.passed, **self.details}


def _unpaired(name, lhs: MCEstimate, rhs: MCEstimate, z, **details) -> CheckReport:
    se = math.hypot(lhs.std_error, rhs.std_error)
    return CheckReport(name, lhs, rhs, lhs.mean - rhs.mean, se, z, details)


def check_projection(E: ExpectationOperator, F: Functional, x: Path, n: int | None = None,
                     z: float = 4.0, stream=("projection",)) -> CheckReport:
    """E F = F for F with horizon <= 0, simulating the full operator horizon anyway."""
    if F.horizon is None or F.horizon > 0:
        raise ValueError("projection check needs a functional with horizon <= 0")
    lhs = E.apply(F, x, n, stream, until=E.horizon)
    return _unpaired("projection", lhs, MCEstimate.exact(F.evaluate(x)), z)


def check_tower(E: ExpectationOperator, s: float, t: float, F: Functional, x: Path,
                n_outer: int = 256, n_inner: int = 256, n_direct: int | None = None,
                z: float = 4.0, stream=("tower",)) -> CheckReport:
    """Nested [E_s E_t F](x) against [E_s F](x)."""
    if not 0 <= s <= t:
        raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
    nested = E.nested_values(s, t, F, x, n_outer, n_inner, stream)
    lhs = MCEstimate.from_samples(nested)
    if n_direct is None:
        n_direct = n_outer * n_inner
    rhs = E.conditional_apply(s, F, x, n_direct, tuple(stream) + ("direct",))
    return _unpaired("tower", lhs, rhs, z, s=s, t=t, n_outer=n_outer, n_inner=n_inner)


def check_homogeneity(E: ExpectationOperator, t: float, F: Functional, x: Path,
                      n_outer: int = 256, n_inner: int = 256, n_direct: int | None = None,
                      z: float = 4.0, stream=("homogeneity",)) -> CheckReport:
    """Nested [E E_t F](x) against [E F](x)."""
    rep = check_tower(E, 0.0, t, F, x, n_outer, n_inner, n_direct, z, stream)
    rep.name = "homogeneity"
    return rep


def check_taking_out_known(E: ExpectationOperator, t: float, F_known: Functional,
                           G: Functional, x: Path, n: int | None = None, z: float = 4.0,
                           stream=("taking_out_known",)) -> CheckReport:
    """E_t(F G) = F E_t G for F with horizon <= t, on shared paths."""
    if F_known.horizon is None or F_known.horizon > t + 1e-12:
        raise ValueError("the known factor needs a horizon <= t")
    until = E.resolve_until(t, G, None)
    fx = F_known.evaluate(x)
    vals = E.sample_values(t, [F_known, G], x, n, stream, until)
    left = vals[0] * vals[1]
    right = fx * vals[1]
    lhs = MCEstimate.from_samples(left)
    rhs = MCEstimate.from_samples(right)
    paired = MCEstimate.from_samples(left - right)
    return CheckReport("taking_out_known", lhs, rhs, lhs.mean - rhs.mean, paired.std_error, z)


@dataclass
class AxiomReport:
    stop_invariance: float
    past_preservation: float
    flow_property: float
    tol: float

    @property
    def results(self):
        return {"phi_stop": self.stop_invariance <= self.tol,
                "stop_phi": self.past_preservation <= self.tol,
                "flow": self.flow_property <= self.tol}

    @property
    def passed(self):
        return all(self.results.values())

    def __bool__(self):
        return self.passed


def _sup_gap(p: Path, q: Path, a: float, b: float) -> float:
    ts = sup_distance_nodes(p, q, a, b)
    return float(np.max(np.abs(p.as_batch().eval_many(ts)[0] - q.as_batch().eval_many(ts)[0])))


def evolution_map_axioms(E: ExpectationOperator, test_paths, t_list=(0.25, 0.5),
                         tol: float = 1e-8) -> AxiomReport:
    """phi o stop = phi, stop o phi = stop, phi(shift(phi x, t)) = shift(phi x, t)."""
    g1 = g2 = g3 = 0.0
    for x in test_paths:
        a = x.grid.t_start - 1.0
        b = E.horizon
        px = E.phi(x)
        g1 = max(g1, _sup_gap(E.phi(stop(x)), px, a, b))
        g2 = max(g2, _sup_gap(stop(px), stop(x), a, b))
        for t in t_list:
            y = shift(px, t)
            g3 = max(g3, _sup_gap(E.phi(y), y, a - t, b - t))
    return AxiomReport(g1, g2, g3, tol)


@dataclass
class SupportProbe:
    mean_abs: MCEstimate
    value_at_center: float
    z_threshold: float = 4.0

    @property
    def positive(self) -> bool:
        m = self.mean_abs
        return m.mean > self.z_threshold * m.std_error and m.mean > 0


def ball_bump(center: Path, delta: float, n_max: int = 20) -> Functional:
    """y -> max(0, 1 - d(y, center) / delta): continuous, nonzero near ``center``."""
    return Functional(
        lambda b: np.maximum(0.0, 1.0 - batch_path_distance(b, center, n_max) / delta),
        horizon=None, bound_hint=1.0, name="ball_bump")


def full_support_probe(E: ExpectationOperator, x: Path, center: Path, delta: float,
                       n: int | None = None, z: float = 4.0, stream=("support",)) -> SupportProbe:
    """Estimate [E |F|](x) for the ball bump F around ``center``."""
    F = ball_bump(center, delta)
    est = E.apply(F, x, n, stream, until=E.horizon)
    return SupportProbe(est, F.evaluate(center), z)
