"""Adjoint-based boundary control of Cahn-Hilliard systems with dynamic boundary conditions."""

from .adjoint import AdjointTrajectory, adjoint_energy, final_residual, lambda_fields, lambda_residual_norm, solve_adjoint
from .config import RunConfig, parse_config, parse_text
from .control import (
    ControlProblem,
    CostSpec,
    OptimizeResult,
    cost,
    gradient_check,
    modified_cost,
    optimize,
    projection_identity_check,
    reduced_gradient,
    stationarity,
    vi_residual,
)
from .estimator import BoundaryControlEstimator
from .exceptions import *  # noqa: F401,F403
from .grid import Grid, build_grid, dual_norm, lift, mean, neumann_solve, norm, trace
from .potential import Potential, check_compatibility, from_spec, logarithmic, polynomial, regular
from .projection import ControlBox, derivative_norm, l2_sigma_inner, l2_sigma_norm, project_uad, qp_oracle_projection
from .state import SolverConfig, State, Trajectory, energy, solve_state, stability_aggregate, step_state, weak_residual
from .study import TauStudyReport, tau_state_sweep, tau_study

__version__ = "0.1.0"
