"""Discretized path space C(R; R^d).

A :class:`Path` stores node values on a uniform :class:`TimeGrid`, evaluates
by linear interpolation between nodes and extends constantly outside the grid.
Node values are right-continuous; an optional ``left`` array holds left limits
so that a jump created by :func:`vertical_bump` is invisible strictly before
the jump time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SNAP = 1e-9


class GridMismatchError(ValueError):
    pass


class NonzeroOriginError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.n_steps >= 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.t_start < self.t_end:
            raise ValueError(f"need t_start < t_end, got [{self.t_start}, {self.t_end}]")

    @classmethod
    def from_dt(cls, t_start: float, dt: float, n_steps: int) -> TimeGrid:
        return cls(float(t_start), float(t_start + n_steps * dt), int(n_steps))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.n_nodes) * self.dt

    def time_of(self, k: int) -> float:
        return self.t_start + k * self.dt

    def position(self, t):
        """Fractional node index of ``t`` (not clipped)."""
        return (np.asarray(t, dtype=float) - self.t_start) / self.dt

    def floor_index(self, t: float) -> int:
        """Index of the last node at or before ``t`` (float-tolerant, not clipped)."""
        return int(math.floor(float(self.position(t)) + _SNAP))

    def is_node(self, t: float) -> bool:
        u = float(self.position(t))
        return abs(u - round(u)) < _SNAP and 0 <= round(u) <= self.n_steps

    def has_zero_node(self) -> bool:
        u = float(self.position(0.0))
        return abs(u - round(u)) < _SNAP

    def shifted(self, t: float) -> TimeGrid:
        return TimeGrid(self.t_start - t, self.t_end - t, self.n_steps)

    def aligned_with(self, other: TimeGrid) -> bool:
        if abs(self.dt - other.dt) > _SNAP * max(self.dt, other.dt):
            return False
        off = (self.t_start - other.t_start) / self.dt
        return abs(off - round(off)) < 1e-7


def _interp_coords(grid: TimeGrid, times):
    """Segment index and weight per time; weight 0 means "exactly at node k"."""
    u = np.atleast_1d(grid.position(times))
    u = np.clip(u, 0.0, grid.n_steps)
    k = np.floor(u + _SNAP).astype(np.int64)
    w = u - k
    w[w < _SNAP] = 0.0
    k = np.minimum(k, grid.n_steps)
    w[k == grid.n_steps] = 0.0
    return k, w


class PathBatch:
    """``m`` paths on one grid: ``values`` and optional ``left`` of shape (m, N, d)."""

    __slots__ = ("grid", "values", "left")

    def __init__(self, grid: TimeGrid, values, left=None):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[1] != grid.n_nodes:
            raise ValueError(f"values must have shape (m, {grid.n_nodes}, d), got {values.shape}")
        self.grid = grid
        self.values = values
        self.left = None if left is None else np.asarray(left, dtype=float)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    def _left_or_values(self):
        return self.values if self.left is None else self.left

    def eval_many(self, times) -> np.ndarray:
        """States at each time: array of shape (m, len(times), d)."""
        k, w = _interp_coords(self.grid, times)
        k1 = np.minimum(k + 1, self.grid.n_steps)
        lo = self.values[:, k, :]
        hi = self._left_or_values()[:, k1, :]
        return lo + w[None, :, None] * (hi - lo)

    def eval(self, t: float) -> np.ndarray:
        """States at time ``t``: array of shape (m, d)."""
        return self.eval_many([t])[:, 0, :]

    def eval_many_left(self, times) -> np.ndarray:
        """Left limits x(t-) at each time, shape (m, len(times), d)."""
        if self.left is None:
            return self.eval_many(times)
        n = self.grid.n_steps
        u = np.clip(np.atleast_1d(self.grid.position(times)), 0.0, n)
        j = np.clip(np.ceil(u - _SNAP).astype(np.int64) - 1, 0, n - 1)
        w = np.clip(u - j, 0.0, 1.0)
        lo = self.values[:, j, :]
        hi = self.left[:, j + 1, :]
        out = lo + w[None, :, None] * (hi - lo)
        at_start = u <= _SNAP
        if np.any(at_start):
            out[:, at_start, :] = self.values[:, :1, :]
        return out

    def with_grid(self, grid: TimeGrid) -> PathBatch:
        return PathBatch(grid, self.values, self.left)

    def node_range(self, a: float, b: float):
        """Indices of nodes with time in [a, b]."""
        lo = max(0, int(math.ceil(float(self.grid.position(a)) - _SNAP)))
        hi = min(self.grid.n_steps, int(math.floor(float(self.grid.position(b)) + _SNAP)))
        return lo, hi

    def path(self, i: int) -> Path:
        left = None if self.left is None else self.left[i]
        return Path(self.grid, self.values[i], left)


class Path:
    """A single path; immutable by convention (arrays are marked read-only)."""

    __slots__ = ("grid", "values", "left")

    def __init__(self, grid: TimeGrid, values, left=None):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.n_nodes:
            raise ValueError(f"expected {grid.n_nodes} node values, got {values.shape[0]}")
        values.setflags(write=False)
        if left is not None:
            left = np.array(left, dtype=float).reshape(values.shape)
            if np.array_equal(left, values):
                left = None
            else:
                left.setflags(write=False)
        self.grid = grid
        self.values = values
        self.left = left

    @classmethod
    def from_function(cls, fn, grid: TimeGrid) -> Path:
        return cls(grid, np.array([np.atleast_1d(fn(t)) for t in grid.times()]))

    @classmethod
    def constant(cls, value, grid: TimeGrid) -> Path:
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.broadcast_to(v, (grid.n_nodes, v.size)))

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def as_batch(self) -> PathBatch:
        left = None if self.left is None else self.left[None]
        return PathBatch(self.grid, self.values[None], left)

    def __call__(self, t):
        return eval_path(self, t)

    def __repr__(self):
        g = self.grid
        return f"Path(d={self.d}, t=[{g.t_start:g}, {g.t_end:g}], n_steps={g.n_steps})"


def eval_path(p: Path, t: float) -> np.ndarray:
    """State of ``p`` at time ``t`` (shape (d,))."""
    return p.as_batch().eval(t)[0]


def shift(p: Path, t: float) -> Path:
    """The translated path s -> p(t + s)."""
    return Path(p.grid.shifted(t), p.values, p.left)


def stop_at(p: Path, t: float) -> Path:
    """The path s -> p(min(s, t)); ``t`` snaps to the last node at or before it."""
    k = p.grid.floor_index(t)
    if k >= p.grid.n_steps:
        return p
    if k < 0:
        return Path.constant(p.values[0], p.grid)
    values = np.array(p.values)
    values[k + 1:] = values[k]
    left = None
    if p.left is not None:
        left = np.array(p.left)
        left[k + 1:] = values[k]
    return Path(p.grid, values, left)


def stop(p: Path) -> Path:
    """The path frozen at time 0."""
    return stop_at(p, 0.0)


def extend(p: Path, t_end: float) -> Path:
    """Same path on a grid reaching at least ``t_end`` (constant continuation)."""
    g = p.grid
    extra = int(math.ceil(float(g.position(t_end)) - _SNAP)) - g.n_steps
    if extra <= 0:
        return p
    grid = TimeGrid.from_dt(g.t_start, g.dt, g.n_steps + extra)
    values = np.concatenate([p.values, np.repeat(p.values[-1:], extra, axis=0)])
    left = None
    if p.left is not None:
        left = np.concatenate([p.left, np.repeat(p.values[-1:], extra, axis=0)])
    return Path(grid, values, left)


def concat_at_zero(past: Path, future: Path) -> Path:
    """``past`` on (-inf, 0] followed by ``past(0) + future(t)`` for t > 0."""
    gp, gf = past.grid, future.grid
    if not (gp.has_zero_node() and gf.has_zero_node() and gp.aligned_with(gf)):
        raise GridMismatchError("both grids need equal dt and a node at 0")
    if gf.t_end <= 0:
        return stop(past)
    f0 = eval_path(future, 0.0)
    if np.max(np.abs(f0)) > 1e-12:
        raise NonzeroOriginError(f"future path must start at 0, got {f0}")
    past = extend(past, 0.0)
    k0 = past.grid.floor_index(0.0)
    j0 = gf.floor_index(0.0)
    n_future = gf.n_steps - j0
    grid = TimeGrid.from_dt(past.grid.t_start, past.grid.dt, k0 + n_future)
    origin = past.values[k0]
    values = np.concatenate([past.values[:k0 + 1], origin + future.values[j0 + 1:]])
    left = None
    if past.left is not None or future.left is not None:
        pl = past.values if past.left is None else past.left
        fl = future.values if future.left is None else future.left
        left = np.concatenate([pl[:k0 + 1], origin + fl[j0 + 1:]])
    return Path(grid, values, left)


def vertical_bump(p: Path, t: float, v, h: float) -> Path:
    """``stop_at(p, t)`` plus a jump of size ``h * v`` at the node ``t``."""
    g = p.grid
    if not (g.t_start - _SNAP * g.dt <= t <= g.t_end + _SNAP * g.dt):
        raise ValueError(f"bump time {t} outside grid window [{g.t_start}, {g.t_end}]")
    k = g.floor_index(t)
    q = stop_at(p, t)
    jump = h * np.atleast_1d(np.asarray(v, dtype=float))
    values = np.array(q.values)
    values[k:] += jump
    left = np.array(q.values if q.left is None else q.left)
    left[k + 1:] = values[k + 1:]
    return Path(g, values, left)


def sup_distance_nodes(p: Path, q: Path, a: float, b: float) -> np.ndarray:
    """Times where sup_{[a,b]} |p - q| is attained for piecewise-linear paths."""
    ts = [a, b]
    for g in (p.grid, q.grid):
        times = g.times()
        ts.append(times[(times >= a) & (times <= b)])
    return np.unique(np.concatenate([np.atleast_1d(x) for x in ts]))


def path_distance(p: Path, q: Path, n_max: int = 20) -> float:
    """Truncated metric sum_{n<=n_max} 2^-n (1 ^ sup_{[-n,n]} |p - q|)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    return float(batch_path_distance(p.as_batch(), q, n_max)[0])


def batch_path_distance(batch: PathBatch, q: Path, n_max: int = 20) -> np.ndarray:
    """``path_distance`` from every path in ``batch`` to ``q``."""
    times = np.unique(np.concatenate([
        np.arange(-n_max, n_max + 1, dtype=float),
        batch.grid.times(), q.grid.times(),
    ]))
    times = times[(times >= -n_max) & (times <= n_max)]
    qb = q.as_batch()
    diff_r = batch.eval_many(times) - qb.eval_many(times)
    gap = np.linalg.norm(diff_r, axis=2)
    # left limits matter only where one of the paths jumps
    if batch.left is not None or q.left is not None:
        eps = 1e-12
        lt = times - eps * max(batch.grid.dt, q.grid.dt)
        diff_l = batch.eval_many(lt) - qb.eval_many(lt)
        gap = np.maximum(gap, np.linalg.norm(diff_l, axis=2))
    total = np.zeros(batch.m)
    for n in range(1, n_max + 1):
        mask = (times >= -n) & (times <= n)
        total += 2.0 ** -n * np.minimum(1.0, gap[:, mask].max(axis=1))
    return total


def max_abs_difference(p: Path, q: Path, times) -> float:
    """max over ``times`` of |p(t) - q(t)|."""
    a = p.as_batch().eval_many(times)[0]
    b = q.as_batch().eval_many(times)[0]
    return float(np.max(np.abs(a - b)))
