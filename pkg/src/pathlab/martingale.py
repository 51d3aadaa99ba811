"""Statistical checks of martingale properties under expectation operators.

Each check compares [E_s V(t)](x) with V(s, x) on a grid of (s, t) pairs and
test paths and reduces every comparison to a z-score |deviation| / std_error.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .expectation import (ExpectationOperator, ItoOperator, MCEstimate, SDECoefficients,
                          z_score)
from .functionals import AdaptedProcess, Functional
from .path_space import Path, PathBatch, TimeGrid
from .semigroup import SourceTerm, solve_fvp_mild


def default_pairs(T: float = 1.0):
    return [(0.0, T / 2), (0.0, T), (T / 4, 3 * T / 4), (T / 2, T)]


def default_panel(T: float = 1.0, dt: float = 1 / 256, seed: int = 0) -> list[Path]:
    """Constants -1, 0, 2, the ramp s -> s on [-1, T] and one Brownian sample on [0, T]."""
    n = int(round(T / dt))
    grid = TimeGrid.from_dt(0.0, dt, n)
    ramp_grid = TimeGrid.from_dt(-1.0, dt, n + int(round(1.0 / dt)))
    z = rng.standard_normals(rng.stream_key(seed, "panel"), np.zeros(1, np.int64), n, 1)[0]
    brownian = np.concatenate([[[0.0]], np.cumsum(z * math.sqrt(dt), axis=0)])
    return [Path.constant(-1.0, grid), Path.constant(0.0, grid), Path.constant(2.0, grid),
            Path(ramp_grid, ramp_grid.times()), Path(grid, brownian)]


PANEL_NAMES = ("const_-1", "const_0", "const_2", "ramp", "brownian")


@dataclass
class MartingaleReport:
    pairs_tested: list
    deviations: list
    max_z: float
    z_threshold: float
    budget: int
    witness: dict
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_z <= self.z_threshold)

    def __bool__(self):
        return self.passed

    @property
    def z_values(self):
        return [z_score(d, se) for d, se in self.deviations]

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=float)

    def deviation_rows(self):
        for (s, t, pid), (dev, se), z in zip(self.pairs_tested, self.deviations, self.z_values):
            yield {"s": s, "t": t, "path_id": pid, "deviation": dev, "std_error": se, "z": z}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "t", "path_id", "deviation", "std_error", "z"])
            for r in self.deviation_rows():
                w.writerow([_fmt(r["s"]), _fmt(r["t"]), r["path_id"], _fmt(r["deviation"]),
                            _fmt(r["std_error"]), _fmt(r["z"])])


def _fmt(v) -> str:
    return f"{float(v):.17g}"


class ConditionalProcess(AdaptedProcess):
    """V(t) = E_t G, each value estimated by ``n_inner`` continuations of the path.

    Inner noise is keyed on the conditioning time and the content of the
    conditioning paths, so repeated evaluations are reproducible.
    """

    def __init__(self, E: ExpectationOperator, G: Functional, n_inner: int | None = 256,
                 time_window=(0.0, 1.0), name="E_t G"):
        super().__init__(self._value, tuple(time_window), name=name)
        self.E, self.G = E, G
        self.n_inner = None if n_inner is None else int(n_inner)
        self.meta["nested"] = True

    def _value(self, t, batch: PathBatch) -> np.ndarray:
        return self.estimate(t, batch)[0]

    def estimate(self, t, batch: PathBatch, n_inner: int | None = None):
        """Inner means and their standard errors for every row of ``batch``."""
        n_inner = self.n_inner if n_inner is None else int(n_inner)
        if not self.E.stochastic:
            n_inner = 1
        if n_inner is None or n_inner < 1:
            raise ValueError(f"{self.name} needs an inner sample budget")
        until = self.E.resolve_until(t, self.G, None)
        rows = max(1, 8192 // n_inner)
        means, ses = [], []
        for r0 in range(0, batch.m, rows):
            sub = PathBatch(batch.grid, batch.values[r0:r0 + rows],
                            None if batch.left is None else batch.left[r0:r0 + rows])
            digest = hashlib.blake2b(sub.values.tobytes(), digest_size=16).hexdigest()
            inner = self.E.extend_batch(sub, t, until, ("nested", float(t), digest), n_inner, 0)
            vals = self.G.evaluate_batch(inner).reshape(sub.m, n_inner)
            means.append(vals.mean(axis=1))
            ses.append(vals.std(axis=1, ddof=1) / math.sqrt(n_inner) if n_inner > 1
                       else np.zeros(sub.m))
        return np.concatenate(means), np.concatenate(ses)


def _target(V: AdaptedProcess, s: float, x: Path, n_target: int | None) -> MCEstimate:
    if isinstance(V, ConditionalProcess):
        m, se = V.estimate(s, x.as_batch(), n_target or V.n_inner * 16)
        return MCEstimate(float(m[0]), float(se[0]), n_target or V.n_inner * 16)
    return MCEstimate.exact(V(s, x))


def _with_inner_budget(V: AdaptedProcess, n_inner):
    if not V.meta.get("nested"):
        return V
    if not isinstance(V, ConditionalProcess):
        raise ValueError(f"{V.name} needs inner sampling; wrap it in ConditionalProcess")
    if n_inner is not None:
        V = ConditionalProcess(V.E, V.G, n_inner, V.time_window, V.name)
    if V.n_inner is None:
        raise ValueError(f"{V.name} needs inner sampling but no inner budget was given")
    return V


def _run_cells(E, pairs, test_paths, n, z, stream, cell) -> MartingaleReport:
    tested, devs = [], []
    budget = 0
    worst = {"z": -1.0}
    for ip, (s, t) in enumerate(pairs):
        if not 0 <= s <= t:
            raise ValueError(f"pairs need 0 <= s <= t, got ({s}, {t})")
        for ix, x in enumerate(test_paths):
            F, target = cell(s, t, x)
            est = E.conditional_apply(s, F, x, n, tuple(stream) + (ip, ix))
            budget += est.n_samples
            dev = est.mean - target.mean
            se = math.hypot(est.std_error, target.std_error)
            tested.append((float(s), float(t), ix))
            devs.append((float(dev), float(se)))
            zi = z_score(dev, se)
            if zi > worst["z"]:
                worst = {"s": float(s), "t": float(t), "path_id": ix, "z": zi,
                         "deviation": float(dev), "std_error": float(se)}
    max_z = max(z_score(d, se) for d, se in devs)
    return MartingaleReport(tested, devs, float(max_z), float(z), budget, worst)


def test_martingale(V: AdaptedProcess, E: ExpectationOperator, pairs=None,
                    test_paths: Sequence[Path] | None = None, n: int | None = 20000,
                    z: float = 4.0, n_inner: int | None = None,
                    n_target: int | None = None,
                    stream=("martingale",)) -> MartingaleReport:
    """Check V(s) = E_s V(t) at every (s, t) pair and test path.

    Processes that are themselves conditional expectations
    (:class:`ConditionalProcess`) are evaluated with their inner budget; the
    value at s uses ``n_target`` inner samples (default 16 * n_inner).
    """
    V = _with_inner_budget(V, n_inner)
    T = V.time_window[1]
    pairs = default_pairs(T) if pairs is None else pairs
    test_paths = default_panel(T, E.dt) if test_paths is None else test_paths

    def cell(s, t, x):
        return V.section(t), _target(V, s, x, n_target)

    return _run_cells(E, pairs, test_paths, n, z, stream, cell)


# pytest would otherwise collect the public function above as a test
test_martingale.__test__ = False


def compensated_functional(V: AdaptedProcess, Psi: AdaptedProcess, s: float, t: float,
                           x: Path) -> Functional:
    """y -> V(t, y) - int_0^t Psi(r, y) dr for paths y that agree with x up to s."""
    past = float(Psi.integrate(x.as_batch(), 0.0, s)[0])
    return Functional(lambda b: V.value(t, b) - Psi.integrate(b, s, t) - past, t,
                      name=f"M({t:g})")


def test_compensated(V: AdaptedProcess, Psi: AdaptedProcess, E: ExpectationOperator,
                     pairs=None, test_paths: Sequence[Path] | None = None,
                     n: int | None = 20000, z: float = 4.0,
                     stream=("compensated",)) -> MartingaleReport:
    """Martingale check of M(t) = V(t) - int_0^t Psi(r) dr along the sampled paths."""
    T = V.time_window[1]
    pairs = default_pairs(T) if pairs is None else pairs
    test_paths = default_panel(T, E.dt) if test_paths is None else test_paths

    def cell(s, t, x):
        F = compensated_functional(V, Psi, s, t, x)
        m_s = V(s, x) - float(Psi.integrate(x.as_batch(), 0.0, s)[0])
        return F, MCEstimate.exact(m_s)

    return _run_cells(E, pairs, test_paths, n, z, stream, cell)


test_compensated.__test__ = False


# -- Markov reduction ---------------------------------------------------------------

def _constant_batch(y: np.ndarray, d: int) -> PathBatch:
    flat = np.asarray(y, dtype=float).reshape(-1, d)
    values = np.repeat(flat[:, None, :], 2, axis=1)
    return PathBatch(TimeGrid(0.0, 1.0, 1), values)


def restrict(V: AdaptedProcess, d: int = 1) -> Callable:
    """u(t, y) = V(t, constant path at y), vectorized over y."""

    def u(t, y):
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, y.shape if d == 1 else y.shape[:-1])
        y = np.broadcast_to(y, shape if d == 1 else shape + (d,))
        t_arr = np.broadcast_to(t, shape)
        out = np.empty(shape)
        flat_t = t_arr.ravel()
        flat_y = y.reshape(-1, d)
        res = out.reshape(-1)
        for tv in np.unique(flat_t):
            mask = flat_t == tv
            res[mask] = V.value(float(tv), _constant_batch(flat_y[mask], d))
        return out

    return u


@dataclass
class EquivalenceReport:
    sup_difference: float
    tolerance: float
    witness: tuple
    passed: bool

    def __bool__(self):
        return self.passed


def test_shifted_fvp_equivalence(V: AdaptedProcess, Psi: AdaptedProcess | None, oracle,
                                 T: float | None = None, t_grid=None, x_grid=None,
                                 se: float = 0.0, panels: int = 400) -> EquivalenceReport:
    """Compare V at constant paths with the mild solution for F = V(T), Phi = Psi."""
    if oracle is None:
        raise ValueError("an analytic semigroup oracle is required")
    T = V.time_window[1] if T is None else T
    t_grid = np.linspace(0.0, T, 9) if t_grid is None else np.asarray(t_grid, dtype=float)
    x_grid = np.linspace(-2.0, 2.0, 21) if x_grid is None else np.asarray(x_grid, dtype=float)
    U = restrict(V, oracle.d)
    f = lambda y: U(T, y)  # noqa: E731
    phi = None
    if Psi is not None:
        if Psi.singular_at is not None:
            phi = SourceTerm(Psi.state_fn, singular_at=Psi.singular_at)
        else:
            P = restrict(Psi, oracle.d)
            phi = SourceTerm(P)
    sol = solve_fvp_mild(oracle, f, phi, T, t_grid, x_grid, panels)
    lhs = np.stack([U(t, x_grid) for t in t_grid])
    gap = np.abs(lhs - sol.u)
    i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
    tol = max(1e-4, 4 * se)
    return EquivalenceReport(float(gap[i, j]), tol, (float(t_grid[i]), float(x_grid[j])),
                             bool(gap[i, j] <= tol))


test_shifted_fvp_equivalence.__test__ = False


# -- Ito isometry --------------------------------------------------------------------

@dataclass
class SimpleProcess:
    """H(s) = values[k] on (partition[k], partition[k+1]]; values[k] has horizon <= partition[k]."""

    partition: Sequence[float]
    values: Sequence[Functional]

    def __post_init__(self):
        if len(self.values) != len(self.partition) - 1:
            raise ValueError("need one value per partition interval")
        for tk, Hk in zip(self.partition, self.values):
            if Hk.horizon is None or Hk.horizon > tk + 1e-12:
                raise ValueError(f"value on ({tk}, ...] must have horizon <= {tk}")


@dataclass
class IsometryReport:
    lhs: MCEstimate
    rhs: MCEstimate
    relative_difference: float
    tolerance: float
    passed: bool

    def __bool__(self):
        return self.passed


def ito_isometry_check(H: SimpleProcess, E: ExpectationOperator,
                       coeffs: SDECoefficients | None = None, T: float = 1.0,
                       n: int = 100000, x0: float = 0.0, z: float = 4.0,
                       rel_tol: float = 0.05, stream=("isometry",)) -> IsometryReport:
    """E[(H.M)(T)^2] against E[int_0^T H^2 Psi^2 ds] for M = X - int b(X) ds.

    ``coeffs=None`` means Brownian motion (b = 0, Psi = 1).
    """
    dt = E.dt
    idx = []
    for tk in H.partition:
        k = tk / dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"partition point {tk} is not on the simulation grid")
        idx.append(int(round(k)))
    if idx[0] != 0 or abs(H.partition[-1] - T) > 1e-12:
        raise ValueError("partition must run from 0 to T")
    x = Path.constant(x0, TimeGrid(0.0, dt, 1))
    lhs_all, rhs_all = [], []
    for batch in E.path_chunks(0.0, x, n, T, stream):
        j0 = batch.grid.floor_index(0.0)
        X = batch.values[:, j0:, :]
        dX = np.diff(X, axis=1)[..., 0]
        if coeffs is None:
            dM = dX
            psi2 = np.ones_like(dM)
        else:
            Xl = X[:, :-1, :].reshape(-1, X.shape[2])
            drift = coeffs.drift(Xl)[:, 0].reshape(dX.shape)
            sig = coeffs.diffusion(Xl)[:, 0, 0].reshape(dX.shape)
            dM = dX - drift * dt
            psi2 = sig ** 2
        stoch = np.zeros(batch.m)
        quad = np.zeros(batch.m)
        for k in range(len(idx) - 1):
            hk = H.values[k].evaluate_batch(batch)
            seg = slice(idx[k], idx[k + 1])
            stoch += hk * dM[:, seg].sum(axis=1)
            quad += hk ** 2 * psi2[:, seg].sum(axis=1) * dt
        lhs_all.append(stoch ** 2)
        rhs_all.append(quad)
    lhs_v, rhs_v = np.concatenate(lhs_all), np.concatenate(rhs_all)
    lhs, rhs = MCEstimate.from_samples(lhs_v), MCEstimate.from_samples(rhs_v)
    paired = MCEstimate.from_samples(lhs_v - rhs_v)
    rel = abs(lhs.mean - rhs.mean) / abs(rhs.mean)
    tol = max(rel_tol, z * paired.std_error / abs(rhs.mean))
    return IsometryReport(lhs, rhs, float(rel), float(tol), bool(rel <= tol))


# -- support counterexample ----------------------------------------------------------

def support_functional_value(t: float, batch: PathBatch) -> np.ndarray:
    """V(t, x) = min((|x(t)| - |x(0)|)^+, 1) for d = 1."""
    xt = np.abs(batch.eval(t)[:, 0])
    x0 = np.abs(batch.eval(0.0)[:, 0])
    return np.minimum(np.maximum(xt - x0, 0.0), 1.0)


@dataclass
class SupportReport:
    n_paths: int
    n_evaluations: int
    max_abs_along_paths: float
    V_s: float
    E_s_V_t: float
    margin: float
    s: float
    t: float
    threshold: float = -0.1

    @property
    def zeros_exact(self) -> bool:
        return self.max_abs_along_paths == 0.0

    @property
    def passed(self) -> bool:
        return self.zeros_exact and self.margin <= self.threshold

    def __bool__(self):
        return self.passed


def support_counterexample(T: float = 1.0, dt: float = 1 / 256, n: int = 500,
                           s: float = 0.5, t: float = 1.0, seed: int = 0) -> SupportReport:
    """sigma = 0, b = -arctan: V vanishes along every flow path but is no E-martingale."""
    coeffs = SDECoefficients(lambda x: -np.arctan(x), None)
    E = ItoOperator(coeffs, dt=dt, horizon=T)
    V = AdaptedProcess(support_functional_value, (0.0, T), name="support_V")
    # random pasts on [-1, 0] with random endpoints
    n_past = int(round(1.0 / dt))
    z = rng.standard_normals(rng.stream_key(seed, "support_pasts"), np.arange(n), n_past + 1, 1)
    grid = TimeGrid.from_dt(-1.0, dt, n_past)
    walk = np.cumsum(z[:, 1:, 0], axis=1) * math.sqrt(dt)
    past = np.concatenate([np.zeros((n, 1)), walk], axis=1) - walk[:, -1:] + 2.0 * z[:, :1, 0]
    batch = E.extend_batch(PathBatch(grid, past[:, :, None]), 0.0, T, ("support",), 1, 0)
    times = np.arange(0, int(round(T / dt)) + 1) * dt
    vals = np.stack([V.value(tt, batch) for tt in times])
    worst, count = float(np.max(np.abs(vals))), vals.size
    ramp_grid = TimeGrid.from_dt(-1.0, dt, int(round((T + 1.0) / dt)))
    ramp = Path(ramp_grid, ramp_grid.times())
    v_s = V(s, ramp)
    e_s = E.conditional_apply(s, V.section(t), ramp).mean
    return SupportReport(n, count, worst, v_s, e_s, e_s - v_s, s, t)
