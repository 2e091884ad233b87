__version__ = "0.1.0"

# Public API exports
from .cache import MatrixCache
from .config import ExperimentConfig, LogConfig, load_config
from .driving import DrivingSystem, FiberOrbit, fiber_sequence
from .errors import (
    ComponentLimitError,
    ConvergenceError,
    EmptySurvivorError,
    LabError,
    NumericalError,
    ValidationError,
    ZeroHoleMeasureError,
)
from .evt import (
    ObservationFunction,
    gumbel_prediction,
    hitting_time_mc,
    solve_thresholds,
    survivor_probability_curve,
)
from .maps import (
    IntervalSet,
    PiecewiseLinearMap,
    beta_map,
    beta_shift,
    custom_map,
    doubling,
    linear_full,
    three_branch,
)
from .open_system import (
    HoleFamily,
    PlacedHoles,
    escape_rate,
    lambda_open,
    survivor_measure,
    survivor_set,
)
from .perturb import delta, eps_schedule, qhat, qhat_monte_carlo, qhat_table, theta
from .pressure import bowen_dimension, expected_pressure, pressure_curve
from .raccim import (
    conditional_invariance_check,
    decay_rate_estimate,
    raccim_density,
    survivor_mass_identity,
)
from .transfer import (
    Cocycle,
    Grid,
    GridDensity,
    WeightSpec,
    closed_equilibrium,
    conformal_sandwich,
    lambda_closed,
)
from .validation import ValidationReport, validate_system

__all__ = [
    "__version__",
    # Configuration
    "ExperimentConfig",
    "LogConfig",
    "load_config",
    # Errors
    "LabError",
    "ValidationError",
    "NumericalError",
    "ConvergenceError",
    "EmptySurvivorError",
    "ZeroHoleMeasureError",
    "ComponentLimitError",
    # Driving and maps
    "DrivingSystem",
    "FiberOrbit",
    "fiber_sequence",
    "IntervalSet",
    "PiecewiseLinearMap",
    "linear_full",
    "doubling",
    "beta_map",
    "beta_shift",
    "three_branch",
    "custom_map",
    # Transfer operators
    "MatrixCache",
    "WeightSpec",
    "Grid",
    "GridDensity",
    "Cocycle",
    "lambda_closed",
    "conformal_sandwich",
    "closed_equilibrium",
    # Open systems
    "HoleFamily",
    "PlacedHoles",
    "survivor_set",
    "survivor_measure",
    "lambda_open",
    "escape_rate",
    # Perturbation
    "eps_schedule",
    "delta",
    "qhat",
    "qhat_table",
    "qhat_monte_carlo",
    "theta",
    # Extreme values
    "ObservationFunction",
    "solve_thresholds",
    "gumbel_prediction",
    "survivor_probability_curve",
    "hitting_time_mc",
    # Pressure
    "expected_pressure",
    "pressure_curve",
    "bowen_dimension",
    # Conditionally invariant measures
    "raccim_density",
    "conditional_invariance_check",
    "survivor_mass_identity",
    "decay_rate_estimate",
    # Validation
    "ValidationReport",
    "validate_system",
]
