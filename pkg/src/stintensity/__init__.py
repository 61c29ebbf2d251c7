"""Spatio-temporal intensity estimation from noisy, incomplete event counts."""
from .cv import CvPlan, CvReport, select_weights, thin_counts
from .graph import AdjacencySpec, Laplacian, build_laplacian, load_adjacency
from .model import (
    NO_LOCATION,
    PRECISE,
    SELF_DECLARED,
    CountVector,
    DetectorLayout,
    DimensionError,
    PopulationField,
    SourceGrid,
    ValidationError,
    detector_intensity,
    gradient,
    link_eta,
    objective,
    objective_and_gradient,
)
from .optimize import FitResult, OptimizerConfig, fit, initialize_theta
from .synthetic import SyntheticSpec, generate_truth, relative_error, run_baselines, sample_counts
from .transition import KindFractions, MisDeclareMatrix, TransitionMatrix, build_transition, estimate_misdeclare

__version__ = "0.1.0"

__all__ = [
    "AdjacencySpec",
    "CountVector",
    "CvPlan",
    "CvReport",
    "DetectorLayout",
    "DimensionError",
    "FitResult",
    "KindFractions",
    "Laplacian",
    "MisDeclareMatrix",
    "NO_LOCATION",
    "OptimizerConfig",
    "PRECISE",
    "PopulationField",
    "SELF_DECLARED",
    "SourceGrid",
    "SyntheticSpec",
    "TransitionMatrix",
    "ValidationError",
    "build_laplacian",
    "build_transition",
    "detector_intensity",
    "estimate_misdeclare",
    "fit",
    "generate_truth",
    "gradient",
    "initialize_theta",
    "link_eta",
    "load_adjacency",
    "objective",
    "objective_and_gradient",
    "relative_error",
    "run_baselines",
    "sample_counts",
    "select_weights",
    "thin_counts",
]
