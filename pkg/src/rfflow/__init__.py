"""Training and test error dynamics of random-feature regression."""
from .curves import (
    AnalyticMeasures,
    ErrorCurve,
    LimitErrors,
    error_curve,
    extract_measures,
    limit_errors,
    test_error,
    train_error,
)
from .density import SpectralMeasure1D, SpectralMeasure2D, atom_weight, density_1d, density_2d
from .estimators import RandomFeatureRegressor
from .model import ModelConfig, get_activation, hermite_coefficients
from .stieltjes import solve_one_point, solve_two_point
from .simulator import exact_flow, empirical_errors, sample_instance

__all__ = [
    "AnalyticMeasures",
    "ErrorCurve",
    "LimitErrors",
    "ModelConfig",
    "RandomFeatureRegressor",
    "SpectralMeasure1D",
    "SpectralMeasure2D",
    "atom_weight",
    "density_1d",
    "density_2d",
    "empirical_errors",
    "error_curve",
    "exact_flow",
    "extract_measures",
    "get_activation",
    "hermite_coefficients",
    "limit_errors",
    "sample_instance",
    "solve_one_point",
    "solve_two_point",
    "test_error",
    "train_error",
]
