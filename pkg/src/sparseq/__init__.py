"""Sparse linear Q* approximation: elimination learner, hard instances and exact oracles."""
from __future__ import annotations

from .elimination import EliminationConfig, RunReport, compute_m, iteration_cap, run_elimination
from .errors import (
    EliminationError,
    EliminationExhausted,
    InstanceIntegrityError,
    IterationCapExceeded,
    ParameterError,
    StrategyError,
    StructuralError,
)
from .mdp import (
    TabularMdp,
    TabularPolicy,
    Trajectory,
    exact_optimal,
    exact_policy_value,
    sample_trajectory,
    sample_trajectories,
    state_distribution,
)
from .sparse import FeatureMap, ParamNet, SparseParam, assumption_gap, build_net, nearest_candidate

__all__ = [
    "EliminationConfig", "RunReport", "compute_m", "iteration_cap", "run_elimination",
    "EliminationError", "EliminationExhausted", "InstanceIntegrityError", "IterationCapExceeded",
    "ParameterError", "StrategyError", "StructuralError",
    "TabularMdp", "TabularPolicy", "Trajectory", "exact_optimal", "exact_policy_value",
    "sample_trajectory", "sample_trajectories", "state_distribution",
    "FeatureMap", "ParamNet", "SparseParam", "assumption_gap", "build_net", "nearest_candidate",
]
