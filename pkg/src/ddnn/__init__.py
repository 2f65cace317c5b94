"""Delay differential neural networks: constant-delay DDE solver, neural delay
fields, adjoint gradients and the synthetic-data training harness."""

from ddnn.errors import DDNNError
from ddnn.solver import (
    FunctionRHS,
    HistorySpec,
    SolverConfig,
    Trajectory,
    adapt_step,
    interpolate,
    rk12_step,
    solve_dde,
    solve_fixed_rk4,
)
from ddnn.field import Combine, DelayField, DelayFieldSpec, field_eval, field_vjp, init_params

__version__ = "0.1.0"

__all__ = [
    "Combine",
    "DDNNError",
    "DelayField",
    "DelayFieldSpec",
    "FunctionRHS",
    "HistorySpec",
    "SolverConfig",
    "Trajectory",
    "adapt_step",
    "field_eval",
    "field_vjp",
    "init_params",
    "interpolate",
    "rk12_step",
    "solve_dde",
    "solve_fixed_rk4",
]
