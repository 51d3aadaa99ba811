"""Registry of reproducible experiments and their configuration and output."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path as FsPath
from typing import Callable

import numpy as np

from . import derivatives as der
from . import expectation as ex
from . import martingale as mg
from . import semigroup as sg
from .functionals import AdaptedProcess, Functional, make_eval, make_integral, make_running_max
from .path_space import Path, TimeGrid

FORMATS = ("csv", "json")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "E1"
    T: float = 1.0
    dt: float = 1 / 256
    n_samples: int = 200_000
    n_inner: int = 512
    base_seed: int = 0
    z_threshold: float = 4.0
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in REGISTRY:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"choose from {', '.join(REGISTRY)}")
        if not (self.T > 0 and self.dt > 0):
            raise ConfigError("T and dt must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) * self.dt > 1e-12:
            raise ConfigError(f"dt={self.dt} does not divide T={self.T}")
        if int(self.n_samples) < 2 or int(self.n_inner) < 2:
            raise ConfigError("sample budgets must be at least 2")
        if not self.z_threshold > 0:
            raise ConfigError("z_threshold must be positive")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if not 0 <= int(self.base_seed) < 2 ** 64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")
        self.n_samples, self.n_inner = int(self.n_samples), int(self.n_inner)
        self.base_seed = int(self.base_seed)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a single JSON object")
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)


@dataclass
class Table:
    header: list
    rows: list

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for row in self.rows:
                w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return sg.format_float(v)
    return v


@dataclass
class Outcome:
    passed: bool
    headline: dict
    payload: dict
    tables: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    experiment: str
    passed: bool
    headline: dict
    payload: dict
    wall_clock: float
    config: dict
    tables: dict = field(default_factory=dict)

    def to_dict(self, include_tables: bool = False) -> dict:
        out = {"experiment": self.experiment, "passed": self.passed,
               "headline": self.headline, "payload": self.payload,
               "wall_clock": self.wall_clock, "config": self.config}
        if include_tables:
            out["tables"] = {k: {"header": t.header, "rows": t.rows}
                             for k, t in self.tables.items()}
        return _plain(out)


def _plain(obj):
    """Convert numpy scalars and arrays, tuples and dataclasses to JSON types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _plain(asdict(obj))
    return obj


# -- shared fixtures ----------------------------------------------------------------

HEAT_SOLUTIONS = {
    "exp_cos": lambda T: lambda t, x: np.exp(-(T - t) / 2) * np.cos(x),
    "exp_sin": lambda T: lambda t, x: np.exp(-(T - t) / 2) * np.sin(x),
    "exp_cos2": lambda T: lambda t, x: np.exp(-2 * (T - t)) * np.cos(2 * x),
    "square": lambda T: lambda t, x: x ** 2 + (T - t),
    "cube": lambda T: lambda t, x: x ** 3 + 3 * x * (T - t),
}

BROWNIAN = ex.SDECoefficients(lambda x: 0.0 * x, lambda x: 1.0 + 0.0 * x)


def _process(u, T, name, singular_at=None):
    return AdaptedProcess.from_state_function(u, (0.0, T), name, singular_at)


def _wiener(cfg):
    return ex.WienerOperator(dt=cfg.dt, horizon=cfg.T, base_seed=cfg.base_seed)


def _panel(cfg):
    return mg.default_panel(cfg.T, cfg.dt, cfg.base_seed)


def _deviation_table(report: mg.MartingaleReport, label: str = "") -> list:
    return [[label, r["s"], r["t"], mg.PANEL_NAMES[r["path_id"]]
             if r["path_id"] < len(mg.PANEL_NAMES) else r["path_id"],
             r["deviation"], r["std_error"], r["z"]] for r in report.deviation_rows()]


DEVIATION_HEADER = ["process", "s", "t", "path", "deviation", "std_error", "z"]


def _martingale_summary(report: mg.MartingaleReport) -> dict:
    return {"max_z": report.max_z, "passed": report.passed, "budget": report.budget,
            "witness": report.witness}


def _field_table(sol: sg.FVPSolution, exact: np.ndarray) -> Table:
    rows = []
    for i, ti in enumerate(sol.t):
        for j, xj in enumerate(sol.x):
            rows.append([float(ti), float(xj), float(sol.u[i, j]), float(exact[i, j]),
                         float(sol.u[i, j] - exact[i, j])])
    return Table(["t", "x", "u", "exact", "error"], rows)


# -- experiments ----------------------------------------------------------------------

def heat_final_value(cfg: ExperimentConfig) -> Outcome:
    T = cfg.T
    oracle = sg.GaussianSemigroup()
    t_grid, x_grid = np.linspace(0.0, T, 32), np.linspace(-2.0, 2.0, 41)
    sol = sg.solve_fvp_mild(oracle, np.cos, None, T, t_grid, x_grid)
    exact = np.exp(-(T - t_grid[:, None]) / 2) * np.cos(x_grid[None, :])
    fvp_err = float(np.max(np.abs(sol.u - exact)))
    V = _process(HEAT_SOLUTIONS["exp_cos"](T), T, "heat")
    rep = mg.test_martingale(V, _wiener(cfg), test_paths=_panel(cfg), n=cfg.n_samples,
                             z=cfg.z_threshold, stream=("E1",))
    eq = mg.test_shifted_fvp_equivalence(V, None, oracle, T)
    passed = fvp_err <= 1e-6 and rep.passed and eq.passed
    return Outcome(passed,
                   {"max_z": rep.max_z, "fvp_max_error": fvp_err,
                    "equivalence_sup_difference": eq.sup_difference},
                   {"martingale": _martingale_summary(rep), "equivalence": asdict(eq)},
                   {"deviations": Table(DEVIATION_HEADER, _deviation_table(rep, "heat")),
                    "u_field": _field_table(sol, exact)})


def integral_mean(cfg: ExperimentConfig) -> Outcome:
    T = cfg.T
    oracle = sg.GaussianSemigroup()
    t_grid, x_grid = np.linspace(0.0, T, 32), np.linspace(-2.0, 2.0, 41)
    sol = sg.solve_fvp_mild(oracle, lambda x: 0.0 * x, lambda r, x: -x ** 2 + 0.0 * r,
                            T, t_grid, x_grid)
    tau = T - t_grid[:, None]
    exact = x_grid[None, :] ** 2 * tau + tau ** 2 / 2
    fvp_err = float(np.max(np.abs(sol.u - exact)))
    V = _process(lambda t, x: 2.0 * (1.0 - np.exp(-(T - t) / 2)) * np.cos(x), T,
                 "integral_mean")
    Psi = _process(lambda t, x: -np.cos(x) + 0.0 * t, T, "minus_f")
    rep = mg.test_compensated(V, Psi, _wiener(cfg), test_paths=_panel(cfg), n=cfg.n_samples,
                              z=cfg.z_threshold, stream=("E2",))
    eq = mg.test_shifted_fvp_equivalence(V, Psi, oracle, T)
    passed = fvp_err <= 1e-6 and rep.passed and eq.passed
    return Outcome(passed,
                   {"max_z": rep.max_z, "fvp_max_error": fvp_err,
                    "equivalence_sup_difference": eq.sup_difference},
                   {"martingale": _martingale_summary(rep), "equivalence": asdict(eq)},
                   {"deviations": Table(DEVIATION_HEADER, _deviation_table(rep, "compensated")),
                    "u_field": _field_table(sol, exact)})


def running_maximum(cfg: ExperimentConfig) -> Outcome:
    T = cfg.T
    oracle = sg.GaussianSemigroup()
    source = sg.running_max_source(lambda x: 1.0 / np.cosh(x) ** 2, T)
    t_pts = np.linspace(0.0, 0.9 * T, 10)
    x_pts = np.linspace(-2.0, 2.0, 41)
    sol = sg.solve_fvp_mild(oracle, np.tanh, source, T, t_pts, x_pts)
    u_mild = sg.fvp_field(sol)
    u_refl = sg.running_max_solution(np.tanh, T)
    mild_vs_reflection = float(np.max(np.abs(sol.u - u_refl(t_pts[:, None], x_pts[None, :]))))
    res = sg.strong_residual(u_mild, source, t_pts, x_pts, dt=1e-2, h=1e-2)

    V = _process(u_refl, T, "running_max")
    Psi = _process(lambda t, x: source.regular_part(t, x), T, "compensator", singular_at=T)
    E = _wiener(cfg)
    comp = mg.test_compensated(V, Psi, E, test_paths=_panel(cfg), n=cfg.n_samples,
                               z=cfg.z_threshold, stream=("E3",))
    plain = mg.test_martingale(V, E, pairs=[(0.0, T)], test_paths=_panel(cfg),
                               n=cfg.n_samples, z=cfg.z_threshold, stream=("E3", "plain"))
    passed = (res.passed and comp.passed and plain.max_z >= 8.0
              and mild_vs_reflection <= 1e-6)
    rows = []
    for i, ti in enumerate(res.t):
        for j, xj in enumerate(res.x):
            rows.append([float(ti), float(xj), float(res.field[i, j]),
                         float(res.coarse_field[i, j]), float(res.extrapolated[i, j])])
    dev = _deviation_table(comp, "compensated") + _deviation_table(plain, "uncompensated")
    return Outcome(passed,
                   {"max_z": comp.max_z, "max_z_uncompensated": plain.max_z,
                    "residual_max": res.max_abs,
                    "residual_max_extrapolated": res.max_abs_extrapolated,
                    "mild_vs_reflection": mild_vs_reflection},
                   {"compensated": _martingale_summary(comp),
                    "uncompensated": _martingale_summary(plain),
                    "residual": {"max_abs": res.max_abs, "max_abs_coarse": res.max_abs_coarse,
                                 "max_abs_extrapolated": res.max_abs_extrapolated,
                                 "grid_too_coarse": res.coarse, "tol": res.tol}},
                   {"residuals": Table(["t", "x", "residual", "residual_coarse",
                                        "residual_extrapolated"], rows),
                    "deviations": Table(DEVIATION_HEADER, dev)})


def ito_residual_panel(cfg: ExperimentConfig) -> Outcome:
    T = cfg.T
    t_list = [0.0, 0.25 * T, 0.5 * T, 0.75 * T, 0.95 * T]
    paths = _panel(cfg)
    rows, worst = [], 0.0
    for name, make in HEAT_SOLUTIONS.items():
        V = _process(make(T), T, name)
        for t in t_list:
            for pid, x in enumerate(paths):
                r = der.ito_residual(V, BROWNIAN, t, x)
                worst = max(worst, abs(r.value))
                rows.append([name, t, mg.PANEL_NAMES[pid], r.value, r.error])
    sq = _process(lambda t, x: x ** 2 + 0.0 * t, T, "x_squared")
    sq_err = 0.0
    for t in t_list:
        for pid, x in enumerate(paths):
            r = der.ito_residual(sq, BROWNIAN, t, x)
            sq_err = max(sq_err, abs(r.value - 1.0))
            rows.append(["x_squared", t, mg.PANEL_NAMES[pid], r.value, r.error])
    one = _process(lambda t, x: 1.0 + 0.0 * x, T, "one")
    rep = mg.test_compensated(sq, one, _wiener(cfg), test_paths=paths, n=cfg.n_samples,
                              z=cfg.z_threshold, stream=("E4",))
    passed = worst <= 1e-4 and sq_err <= 1e-4 and rep.passed
    return Outcome(passed,
                   {"max_abs_psi_heat": worst, "max_abs_psi_square_minus_one": sq_err,
                    "max_z": rep.max_z},
                   {"compensated": _martingale_summary(rep)},
                   {"residuals": Table(["process", "t", "path", "psi", "error_estimate"], rows),
                    "deviations": Table(DEVIATION_HEADER, _deviation_table(rep, "x_squared"))})


def _random_path(gen: np.random.Generator, T: float, dt: float) -> Path:
    n = int(round(T / dt))
    grid = TimeGrid.from_dt(0.0, dt, n)
    steps = gen.standard_normal(n) * math.sqrt(dt)
    return Path(grid, np.concatenate([[gen.uniform(-1, 1)], gen.uniform(-1, 1) + np.cumsum(steps)]))


def deterministic_dupire(cfg: ExperimentConfig) -> Outcome:
    T, dt = cfg.T, cfg.dt
    flow_b = lambda x: -np.arctan(x)  # noqa: E731
    flow = ex.FlowOperator(flow_b, dt=dt, horizon=T)
    stopping = ex.StoppingOperator(dt=dt, horizon=T)
    paths = _panel(cfg)
    axioms = {"flow": ex.evolution_map_axioms(flow, paths[:4]),
              "stopping": ex.evolution_map_axioms(stopping, paths[:4])}

    # chain rule along the flow: d/dt u(t, phi(t)) = u_t + u_x b(phi), on a dt/4 lattice
    # so the O(h^2) remainder left by one Richardson step stays below 1e-5
    fine_flow = ex.FlowOperator(flow_b, dt=dt / 4, horizon=T)
    smooth = {
        "exp_cos": (HEAT_SOLUTIONS["exp_cos"](T),
                    lambda t, x: 0.5 * np.exp(-(T - t) / 2) * np.cos(x),
                    lambda t, x: -np.exp(-(T - t) / 2) * np.sin(x)),
        "decay_sin": (lambda t, x: np.exp(-t) * np.sin(x),
                      lambda t, x: -np.exp(-t) * np.sin(x),
                      lambda t, x: np.exp(-t) * np.cos(x)),
        "tx_squared": (lambda t, x: t * x ** 2, lambda t, x: x ** 2, lambda t, x: 2 * t * x),
    }
    chain_rows, chain_err, chain_within_estimate = [], 0.0, True
    for name, (u, ut, ux) in smooth.items():
        V = _process(u, T, name)
        for t in (0.25 * T, 0.5 * T):
            for pid in (2, 3):
                x = paths[pid]
                tn = fine_flow.lattice_index(t) * fine_flow.dt
                xt = float(x(tn)[0])
                est = der.e_derivative(V, fine_flow, tn, x)
                target = float(ut(tn, xt) + ux(tn, xt) * flow_b(xt))
                err = abs(est.value - target)
                chain_within_estimate &= err <= est.error_estimate
                chain_err = max(chain_err, err)
                chain_rows.append(["chain_rule", name, tn, mg.PANEL_NAMES[pid], est.value,
                                   target, err, est.error_estimate])

    # stopping operator derivative against the horizontal derivative
    gen = np.random.default_rng(cfg.base_seed)
    catalog = [
        ("cylinder_sin", _process(lambda t, x: np.sin(x) * (1 + t), T, "cylinder_sin")),
        ("cylinder_quad", _process(lambda t, x: t * t + x * x, T, "cylinder_quad")),
        ("integral_cos", AdaptedProcess.from_functionals(
            lambda t: make_integral(np.cos, 0.0, t), (0.0, T), "integral_cos")),
        ("running_max", AdaptedProcess.from_functionals(
            lambda t: make_running_max(np.tanh, 0.0, t), (0.0, T), "running_max")),
        ("time_weighted", AdaptedProcess.from_functionals(
            lambda t: make_integral(lambda y: y * y, 0.0, t), (0.0, T), "time_weighted")),
    ]
    n_steps = int(round(T / dt))
    stop_ok, stop_gap = True, 0.0
    for case in range(30):
        name, V = catalog[case % len(catalog)]
        t = int(gen.integers(0, n_steps - 8)) * dt
        x = _random_path(gen, T, dt)
        a = der.e_derivative(V, stopping, t, x)
        b = der.dupire_horizontal(V, t, x)
        gap = abs(a.value - b.value)
        bound = a.error_estimate + b.error_estimate + 1e-10
        stop_ok &= gap <= bound
        stop_gap = max(stop_gap, gap)
        chain_rows.append(["stopping_identity", name, t, f"random_{case}", a.value, b.value,
                           gap, bound])

    # E_t G processes have vanishing E-derivative
    E = _wiener(cfg)
    annihilation_ok, worst_ratio = True, 0.0
    for name in ("exp_cos", "square", "cube"):
        V = _process(HEAT_SOLUTIONS[name](T), T, name)
        for t in (0.25 * T, 0.5 * T):
            for pid in (1, 3):
                est = der.e_derivative(V, E, t, paths[pid], n=cfg.n_samples,
                                       stream=("E5", name, t, pid))
                tol = est.tolerance(cfg.z_threshold)
                annihilation_ok &= abs(est.value) <= tol
                worst_ratio = max(worst_ratio, abs(est.value) / tol)
                chain_rows.append(["annihilation", name, t, mg.PANEL_NAMES[pid], est.value,
                                   0.0, abs(est.value), tol])
    passed = (all(a.passed for a in axioms.values()) and chain_err <= 1e-5
              and chain_within_estimate and stop_ok and annihilation_ok)
    return Outcome(passed,
                   {"chain_rule_max_error": chain_err, "stopping_max_gap": stop_gap,
                    "annihilation_worst_ratio": worst_ratio,
                    "flow_axiom_max_gap": max(axioms["flow"].stop_invariance,
                                              axioms["flow"].past_preservation,
                                              axioms["flow"].flow_property)},
                   {"axioms": {k: {**asdict(v), "results": v.results}
                               for k, v in axioms.items()},
                    "stopping_identity_passed": stop_ok,
                    "chain_rule_within_error_estimate": chain_within_estimate,
                    "annihilation_passed": annihilation_ok},
                   {"derivatives": Table(["check", "process", "t", "path", "estimate",
                                          "target", "gap", "bound"], chain_rows)})


def support(cfg: ExperimentConfig) -> Outcome:
    rep = mg.support_counterexample(cfg.T, cfg.dt, 500, 0.5 * cfg.T, cfg.T, cfg.base_seed)
    return Outcome(rep.passed,
                   {"margin": rep.margin, "max_abs_along_paths": rep.max_abs_along_paths},
                   {**asdict(rep), "zeros_exact": rep.zeros_exact})


def operator_axioms(cfg: ExperimentConfig) -> Outcome:
    T = cfg.T
    ops = {
        "wiener": _wiener(cfg),
        "ito_arctan": ex.ItoOperator(ex.SDECoefficients(lambda x: -np.arctan(x),
                                                        lambda x: 1.0 + 0.0 * x),
                                     dt=cfg.dt, horizon=T, base_seed=cfg.base_seed),
    }
    grid = TimeGrid.from_dt(-1.0, cfg.dt, int(round(1.0 / cfg.dt)))
    x = Path(grid, 0.3 + 0.2 * np.sin(3 * grid.times()))
    n, n_inner = cfg.n_samples, cfg.n_inner
    n_outer = max(2, n // n_inner)
    past = make_integral(np.cos, -1.0, 0.0)
    G = make_eval(np.cos, T)
    M = make_running_max(np.tanh, 0.0, T)
    known = make_eval(np.sin, 0.5 * T)
    rows, reports = [], {}
    for name, E in ops.items():
        checks = [
            ex.check_projection(E, past, x, n, cfg.z_threshold, (name, "projection")),
            ex.check_homogeneity(E, 0.5 * T, G, x, n_outer, n_inner, n, cfg.z_threshold,
                                 (name, "homogeneity")),
            ex.check_tower(E, 0.25 * T, 0.5 * T, M, x, n_outer, n_inner, n, cfg.z_threshold,
                           (name, "tower")),
            ex.check_taking_out_known(E, 0.5 * T, known, G, x, n, cfg.z_threshold,
                                      (name, "taking_out_known")),
        ]
        for c in checks:
            rows.append([name, c.name, c.lhs.mean, c.rhs.mean, c.diff, c.std_error, c.z,
                         c.passed])
            reports[f"{name}.{c.name}"] = c.to_dict()
    zs = [r[6] for r in rows]
    return Outcome(all(r[7] for r in rows), {"max_z": float(max(zs))}, reports,
                   {"axioms": Table(["operator", "check", "lhs", "rhs", "difference",
                                     "std_error", "z", "passed"], rows)})


def resolvent_laws(cfg: ExperimentConfig) -> Outcome:
    oracle = sg.GaussianSemigroup()
    xs = np.array([-1.0, 0.0, 2.0])
    one = lambda y: np.ones_like(np.asarray(y, dtype=float))  # noqa: E731
    r1 = {lam: float(np.max(np.abs(sg.laplace_resolvent(oracle, lam, one, xs) - 1.0 / lam)))
          for lam in (0.5, 1.0, 2.0)}
    fs = {"cos": np.cos, "gauss": lambda y: np.exp(-y * y)}
    ident = {k: float(np.max(np.abs(sg.resolvent_identity_residual(oracle, f, xs[:2]))))
             for k, f in fs.items()}
    law = {k: float(np.max(np.abs(sg.semigroup_law_residual(oracle, f, 0.3, 0.45, xs))))
           for k, f in fs.items()}
    rmax, imax, lmax = max(r1.values()), max(ident.values()), max(law.values())
    return Outcome(rmax <= 1e-8 and imax <= 1e-5 and lmax <= 1e-6,
                   {"resolvent_of_one_max_error": rmax, "resolvent_identity_max": imax,
                    "semigroup_law_max": lmax},
                   {"resolvent_of_one": {str(k): v for k, v in r1.items()},
                    "resolvent_identity": ident, "semigroup_law": law})


def ito_isometry(cfg: ExperimentConfig) -> Outcome:
    T = cfg.T
    E = _wiener(cfg)
    one, zero = make_eval(lambda y: 1.0 + 0.0 * y, 0.0), make_eval(lambda y: 0.0 * y, 0.0)
    sign = Functional(lambda b: np.sign(b.eval(0.5 * T)[:, 0]), 0.5 * T, 1.0, "sign")
    cases = {
        "one": mg.SimpleProcess([0.0, T], [one]),
        "late_indicator": mg.SimpleProcess([0.0, 0.5 * T, T], [zero, one]),
        "late_sign": mg.SimpleProcess([0.0, 0.5 * T, T], [zero, sign]),
    }
    rows, ok, worst = [], True, 0.0
    for name, H in cases.items():
        r = mg.ito_isometry_check(H, E, None, T, cfg.n_samples, z=cfg.z_threshold,
                                  stream=("E9", name))
        ok &= r.passed
        worst = max(worst, r.relative_difference)
        rows.append([name, r.lhs.mean, r.lhs.std_error, r.rhs.mean, r.relative_difference,
                     r.tolerance, r.passed])
    return Outcome(ok, {"max_relative_difference": worst}, {},
                   {"isometry": Table(["H", "lhs", "lhs_std_error", "rhs",
                                       "relative_difference", "tolerance", "passed"], rows)})


@dataclass(frozen=True)
class Entry:
    id: str
    name: str
    description: str
    anchor: str
    tags: tuple
    calls: tuple
    run: Callable[[ExperimentConfig], Outcome]


REGISTRY: dict[str, Entry] = {e.id: e for e in [
    Entry("E1", "heat final value",
          "mild FVP solution and MC martingale test for exp(-(T-t)/2) cos x",
          "final value problem u(t) = S(T-t) f", ("fvp", "martingale"),
          ("semigroup.solve_fvp_mild", "martingale.test_martingale",
           "martingale.test_shifted_fvp_equivalence"), heat_final_value),
    Entry("E2", "integral mean",
          "source-driven FVP and compensated martingale for int_t^T S(r-t) f dr",
          "u(t) = int_t^T S(r-t) f dr solves d_t u = -A u - f", ("fvp", "martingale"),
          ("semigroup.solve_fvp_mild", "martingale.test_compensated",
           "martingale.test_shifted_fvp_equivalence"), integral_mean),
    Entry("E3", "running maximum",
          "strong residual and compensated martingale of the running-max value function",
          "u(t, B_t) + int f'(B_s) / sqrt(2 pi (T - s)) ds is a martingale",
          ("fvp", "martingale"),
          ("semigroup.strong_residual", "martingale.test_compensated",
           "martingale.test_martingale"), running_maximum),
    Entry("E4", "Ito residual panel",
          "functional Ito residual of heat solutions and of x(t)^2",
          "d_t u = -(1/2) d_xx u makes Psi vanish", ("derivatives", "martingale"),
          ("derivatives.ito_residual", "martingale.test_compensated"), ito_residual_panel),
    Entry("E5", "deterministic evolution and Dupire derivatives",
          "flow axioms, chain rule, stopping identity and martingale annihilation",
          "E-derivative along a flow is d_t u + grad u . phi'", ("derivatives", "axioms"),
          ("expectation.evolution_map_axioms", "derivatives.e_derivative",
           "derivatives.dupire_horizontal"), deterministic_dupire),
    Entry("E6", "support counterexample",
          "sigma = 0, b = -arctan: zero along flow paths but no E-martingale",
          "V(t, x) = min((|x(t)| - |x(0)|)^+, 1) is no E-martingale",
          ("martingale", "support"), ("martingale.support_counterexample",), support),
    Entry("E7", "operator axioms",
          "projection, homogeneity, tower and taking out what is known",
          "defining properties of an expectation operator", ("axioms",),
          ("expectation.check_projection", "expectation.check_homogeneity",
           "expectation.check_tower", "expectation.check_taking_out_known"), operator_axioms),
    Entry("E8", "resolvent and semigroup laws",
          "R(lambda) 1 = 1/lambda, resolvent identity, S(t+s) = S(t) S(s)",
          "resolvent identity R(l) - R(m) = (m - l) R(l) R(m)", ("semigroup",),
          ("semigroup.laplace_resolvent", "semigroup.resolvent_identity_residual",
           "semigroup.semigroup_law_residual"), resolvent_laws),
    Entry("E9", "Ito isometry",
          "E[(H.M)(T)^2] against E[int H^2 Psi^2] for three simple integrands",
          "Ito isometry for the compensated coordinate martingale", ("martingale",),
          ("martingale.ito_isometry_check",), ito_isometry),
]}


def list_experiments(tag: str | None = None) -> list[dict]:
    return [{"id": e.id, "name": e.name, "description": e.description, "anchor": e.anchor,
             "tags": list(e.tags), "calls": list(e.calls)}
            for e in REGISTRY.values() if tag is None or tag in e.tags]


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run one registry entry; write its files when ``cfg.out`` is set."""
    cfg.validate()
    start = time.perf_counter()
    outcome = REGISTRY[cfg.experiment].run(cfg)
    wall = time.perf_counter() - start
    result = ExperimentResult(cfg.experiment, bool(outcome.passed), _plain(outcome.headline),
                              _plain(outcome.payload), wall, cfg.to_dict(),
                              {k: Table(t.header, _plain(t.rows))
                               for k, t in outcome.tables.items()})
    if write and cfg.out is not None:
        emit(result, cfg.out, cfg.format)
    return result


def emit(result: ExperimentResult, out, fmt: str = "csv") -> list:
    """Write CSV tables plus summary.json (csv) or one JSON document (json)."""
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    out = FsPath(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        for name, table in result.tables.items():
            path = out / f"{name}.csv"
            table.write(path)
            written.append(path)
    summary = out / "summary.json"
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(result.to_dict(include_tables=fmt == "json"), fh, indent=2)
        fh.write("\n")
    written.append(summary)
    return written
