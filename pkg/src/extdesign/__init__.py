"""Extended E-, c- and G-optimal designs for nonlinear regression models."""
from .criteria import (CriterionSpec, H_value, builtin_functional, classical_value, evaluate_phi,
                       linear_functional, optimality_certificate)
from .curvature import CurvatureReport, curvature_measures
from .cutting_plane import OptimizationReport, optimize, optimize_refined
from .design import DesignMeasure, info_matrix, uniform_design, validate_design
from .errors import (ConfigError, DesignError, ExtDesignError, LPError, ModelError, NumericError,
                     RegistryError, VacuousConstraint)
from .estimation import (ObservationSet, localization_radius, ls_fit_multistart,
                         simulate_observations)
from .models import Box, FiniteSet, RegressionModel, builtin_model, linear_model
from .search import GridSpec

__version__ = "0.1.0"

__all__ = [
    "Box", "ConfigError", "CriterionSpec", "CurvatureReport", "DesignError", "DesignMeasure",
    "ExtDesignError", "FiniteSet", "GridSpec", "H_value", "LPError", "ModelError", "NumericError",
    "ObservationSet", "OptimizationReport", "RegistryError", "RegressionModel", "VacuousConstraint",
    "builtin_functional", "builtin_model", "classical_value", "curvature_measures", "evaluate_phi",
    "info_matrix", "linear_functional", "linear_model", "localization_radius", "ls_fit_multistart",
    "optimality_certificate", "optimize", "optimize_refined", "simulate_observations",
    "uniform_design", "validate_design",
]
