"""Finite-difference derivatives of adapted processes.

Each estimator evaluates one-sided difference quotients on a decreasing step
ladder and removes the O(h) bias by Richardson extrapolation of neighbouring
ladder entries. The reported value is the last extrapolant and the error
estimate is its distance to the previous one.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .expectation import ExpectationOperator, SDECoefficients
from .functionals import AdaptedProcess
from .path_space import Path, stop_at, vertical_bump

DEFAULT_VERTICAL_LADDER = (4e-3, 2e-3, 1e-3)


class ConditioningWarning(UserWarning):
    pass


@dataclass
class DerivativeEstimate:
    value: float
    h_ladder: list
    raw_quotients: list
    extrapolated: bool
    error_estimate: float
    std_error: float = 0.0
    reliable: bool = True
    extrapolants: list = field(default_factory=list)

    def tolerance(self, z: float = 4.0) -> float:
        return max(z * self.std_error, self.error_estimate)


def richardson(h, q):
    """Pairwise O(h)-bias elimination: (h_a q_b - h_b q_a) / (h_a - h_b).

    ``q`` may carry trailing sample axes.
    """
    h = np.asarray(h, dtype=float)
    q = np.asarray(q, dtype=float)
    shape = (-1,) + (1,) * (q.ndim - 1)
    ha, hb = h[:-1].reshape(shape), h[1:].reshape(shape)
    return (ha * q[1:] - hb * q[:-1]) / (ha - hb)


def _check_ladder(h_ladder):
    h = [float(v) for v in h_ladder]
    if not h or any(v <= 0 for v in h):
        raise ValueError("step ladder must contain positive steps")
    if any(b >= a for a, b in zip(h, h[1:])):
        raise ValueError(f"step ladder must be strictly decreasing, got {h}")
    return h


def _shrinking(q) -> bool:
    # successive raw differences should not grow; exact quotients give zeros
    diffs = np.abs(np.diff(np.asarray(q, dtype=float)))
    scale = 1e-9 * max(1.0, float(np.max(np.abs(q))))
    return bool(np.all(diffs[1:] <= diffs[:-1] + scale))


def _estimate(h, q_mean, samples=None) -> DerivativeEstimate:
    """Assemble an estimate from mean quotients and optional per-sample quotients."""
    q_mean = np.asarray(q_mean, dtype=float)
    if len(h) == 1:
        return DerivativeEstimate(float(q_mean[0]), list(h), q_mean.tolist(), False, math.inf,
                                  _se(samples[0]) if samples is not None else 0.0, False)
    ext = richardson(h, q_mean)
    value = float(ext[-1])
    err = float(abs(ext[-1] - ext[-2])) if len(ext) > 1 else float(abs(q_mean[-1] - q_mean[-2]))
    se = 0.0
    if samples is not None:
        se = _se(richardson(h, samples)[-1])
    return DerivativeEstimate(value, list(h), q_mean.tolist(), True, err, se,
                              _shrinking(q_mean), ext.tolist())


def _se(values) -> float:
    values = np.asarray(values, dtype=float)
    return 0.0 if values.size < 2 else float(values.std(ddof=1) / math.sqrt(values.size))


def _node_time(x: Path, t: float) -> float:
    return x.grid.time_of(x.grid.floor_index(t))


def _default_horizontal(dt: float):
    return (4 * dt, 2 * dt, dt)


def e_derivative(V: AdaptedProcess, E: ExpectationOperator, t: float, x: Path,
                 h_ladder=None, n: int | None = None, stream=("e_derivative",)
                 ) -> DerivativeEstimate:
    """lim_{h -> 0} E_t[(V(t+h) - V(t)) / h] at x, one set of paths for the whole ladder.

    ``t`` is snapped to the operator lattice.
    """
    t = E.lattice_index(t) * E.dt
    h = _check_ladder(h_ladder or _default_horizontal(E.dt))
    V.check_window(t, t + h[0])
    qs = []
    for batch in E.path_chunks(t, x, n, t + h[0], stream):
        base = V.value(t, batch)
        qs.append(np.stack([(V.value(t + hi, batch) - base) / hi for hi in h]))
    q = np.concatenate(qs, axis=1)
    samples = q if q.shape[1] > 1 else None
    return _estimate(h, q.mean(axis=1), samples)


def dupire_horizontal(V: AdaptedProcess, t: float, x: Path, h_ladder=None
                      ) -> DerivativeEstimate:
    """lim (V(t+h, stop_at(x, t)) - V(t, x)) / h; t is snapped to a node of x."""
    t = _node_time(x, t)
    h = _check_ladder(h_ladder or _default_horizontal(x.grid.dt))
    V.check_window(t, t + h[0])
    frozen = stop_at(x, t)
    base = V(t, x)
    q = [(V(t + hi, frozen) - base) / hi for hi in h]
    return _estimate(h, q)


def _unit(d: int, i: int) -> np.ndarray:
    e = np.zeros(d)
    e[i] = 1.0
    return e


def dupire_vertical(V: AdaptedProcess, t: float, x: Path, v=None, h_ladder=None
                    ) -> DerivativeEstimate:
    """lim (V(t, bump(x, t, v, h)) - V(t, x)) / h for h decreasing to 0."""
    t = _node_time(x, t)
    V.check_window(t)
    v = _unit(x.d, 0) if v is None else np.atleast_1d(np.asarray(v, dtype=float))
    h = _check_ladder(h_ladder or DEFAULT_VERTICAL_LADDER)
    base = V(t, x)
    q = [(V(t, vertical_bump(x, t, v, hi)) - base) / hi for hi in h]
    return _estimate(h, q)


def _vertical2_ordered(V, t, x, i, j, h):
    ei, ej = _unit(x.d, i), _unit(x.d, j)
    base = dupire_vertical(V, t, x, ei, h)
    q = [(dupire_vertical(V, t, vertical_bump(x, t, ej, hi), ei, h).value - base.value) / hi
         for hi in h]
    return _estimate(h, q)


def dupire_vertical2(V: AdaptedProcess, t: float, x: Path, i: int = 0, j: int = 0,
                     h_ladder=None) -> DerivativeEstimate:
    """Iterated vertical derivative, averaged over the two bump orders."""
    t = _node_time(x, t)
    V.check_window(t)
    h = _check_ladder(h_ladder or DEFAULT_VERTICAL_LADDER)
    a = _vertical2_ordered(V, t, x, i, j, h)
    if i == j:
        return a
    b = _vertical2_ordered(V, t, x, j, i, h)
    err = max(a.error_estimate, b.error_estimate)
    gap = abs(a.value - b.value)
    if gap > 10 * err and gap > 1e-10:
        warnings.warn(f"bump orders disagree by {gap:.3g} (error estimate {err:.3g})",
                      ConditioningWarning, stacklevel=2)
    q = [(qa + qb) / 2 for qa, qb in zip(a.raw_quotients, b.raw_quotients)]
    return DerivativeEstimate((a.value + b.value) / 2, h, q, True, max(err, gap / 2),
                              0.0, a.reliable and b.reliable)


@dataclass
class ItoResidual:
    value: float
    error: float
    horizontal: DerivativeEstimate
    gradient: list
    hessian: list
    drift: np.ndarray
    diffusion: np.ndarray


def ito_residual(V: AdaptedProcess, coeffs: SDECoefficients, t: float, x: Path,
                 h_spec: dict | None = None) -> ItoResidual:
    """Psi = dV/dt (horizontal) + <b, grad V> + (1/2) tr(sigma sigma^T hess V) at (t, x).

    ``h_spec`` may carry ``horizontal`` and ``vertical`` step ladders.
    """
    h_spec = h_spec or {}
    d = x.d
    hor = dupire_horizontal(V, t, x, h_spec.get("horizontal"))
    hv = h_spec.get("vertical")
    grad = [dupire_vertical(V, t, x, _unit(d, i), hv) for i in range(d)]
    hess = [[dupire_vertical2(V, t, x, i, j, hv) for j in range(d)] for i in range(d)]
    state = x(_node_time(x, t))[None, :]
    b = coeffs.drift(state)[0]
    s = coeffs.diffusion(state)[0]
    a = s @ s.T
    value = hor.value + sum(b[i] * grad[i].value for i in range(d)) \
        + 0.5 * sum(a[i, j] * hess[i][j].value for i in range(d) for j in range(d))
    error = hor.error_estimate + sum(abs(b[i]) * grad[i].error_estimate for i in range(d)) \
        + 0.5 * sum(abs(a[i, j]) * hess[i][j].error_estimate for i in range(d) for j in range(d))
    return ItoResidual(float(value), float(error), hor, grad, hess, b, s)
