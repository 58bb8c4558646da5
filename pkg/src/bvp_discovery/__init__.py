"""Operator and coefficient discovery for forced boundary value problems.

Trials ``(f_j, u_j)`` of ``L[u] = f`` are regressed position by position
onto a library of candidate terms with group sparsity, and the learned
expansion of the highest derivative is inverted into ``L``.
"""
from .discovery import (
    DiscoveredOperator,
    DiscoveryReport,
    coefficient_error,
    estimate_parameters,
    extract_parameters,
    identify_operator,
    infer_operator,
    predict_forcing,
    select_order,
    spurious_term_count,
)
from .features import CandidateLibrary, assemble_system, build_term_list, normalize
from .models import CATALOG, ForcingGrid, ForcingSpec, Grid, ModelSpec, get_model
from .regression import RegressionConfig, SparseSpatialModel, identify, known_operator_fit, sgtr, tolerance_sweep
from .signal import DifferentiationConfig, DiffMethod, add_noise
from .solver import Trial, TrialSet, generate_trials

__all__ = [
    "CATALOG", "CandidateLibrary", "DiffMethod", "DifferentiationConfig", "DiscoveredOperator",
    "DiscoveryReport", "ForcingGrid", "ForcingSpec", "Grid", "ModelSpec", "RegressionConfig",
    "SparseSpatialModel", "Trial", "TrialSet", "add_noise", "assemble_system", "build_term_list",
    "coefficient_error", "estimate_parameters", "extract_parameters", "generate_trials", "get_model",
    "identify", "identify_operator", "infer_operator", "known_operator_fit", "normalize",
    "predict_forcing", "select_order", "sgtr", "spurious_term_count", "tolerance_sweep",
]
