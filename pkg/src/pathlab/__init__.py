"""Expectation operators, semigroups and martingale checks on path space."""
from .derivatives import (DerivativeEstimate, dupire_horizontal, dupire_vertical,
                          dupire_vertical2, e_derivative, ito_residual)
from .expectation import (FlowOperator, ItoOperator, MCEstimate, SDECoefficients,
                          StoppingOperator, WienerOperator)
from .experiments import ExperimentConfig, list_experiments, run_experiment
from .functionals import AdaptedProcess, Functional, make_eval, make_integral, make_running_max
from .martingale import (ConditionalProcess, MartingaleReport, test_compensated,
                         test_martingale)
from .path_space import Path, PathBatch, TimeGrid
from .semigroup import GaussianSemigroup, laplace_resolvent, solve_fvp_mild

__version__ = "0.1.0"

__all__ = [
    "AdaptedProcess", "ConditionalProcess", "DerivativeEstimate", "ExperimentConfig",
    "FlowOperator", "Functional", "GaussianSemigroup", "ItoOperator", "MCEstimate",
    "MartingaleReport", "Path", "PathBatch", "SDECoefficients", "StoppingOperator",
    "TimeGrid", "WienerOperator", "dupire_horizontal", "dupire_vertical", "dupire_vertical2",
    "e_derivative", "ito_residual", "laplace_resolvent", "list_experiments", "make_eval",
    "make_integral", "make_running_max", "run_experiment", "solve_fvp_mild",
    "test_compensated", "test_martingale",
]
