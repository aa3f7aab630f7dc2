"""Real-time trajectory generation with minimum-snap polynomials and local Gaussian modifiers."""

from .dynamic import (
    DynamicTrajectory,
    DynamicWaypoint,
    ModificationOutcome,
    OutcomeKind,
    SecurityConfig,
    SwapAbortedError,
    WaypointPassedError,
    build_initial,
    eval_dyn,
    in_security_zone,
    make_swap_waypoints,
    modify_waypoint,
    swap_in,
)
from .lgm import GaussianModifier, ModifierBank, TooLateError, eval_lgm, make_lgm
from .poly import (
    DynamicsLimits,
    MinSnapTrajectory,
    PiecewisePolynomial,
    SolverError,
    WaypointConstraint,
    allocate_segment_times,
    eval_poly,
    plan_trajectory,
    poly_duration,
    snap_cost,
    solve_min_snap,
)
from .sim import Gate, RaceConfig, RaceResult, default_circuit, run_race
from .timing import ComputationTimeEstimator, record_solve

__version__ = "0.1.0"

__all__ = [
    "ComputationTimeEstimator",
    "DynamicTrajectory",
    "DynamicWaypoint",
    "DynamicsLimits",
    "Gate",
    "GaussianModifier",
    "MinSnapTrajectory",
    "ModificationOutcome",
    "ModifierBank",
    "OutcomeKind",
    "PiecewisePolynomial",
    "RaceConfig",
    "RaceResult",
    "SecurityConfig",
    "SolverError",
    "SwapAbortedError",
    "TooLateError",
    "WaypointConstraint",
    "WaypointPassedError",
    "allocate_segment_times",
    "build_initial",
    "default_circuit",
    "eval_dyn",
    "eval_lgm",
    "eval_poly",
    "in_security_zone",
    "make_lgm",
    "make_swap_waypoints",
    "modify_waypoint",
    "plan_trajectory",
    "poly_duration",
    "record_solve",
    "run_race",
    "snap_cost",
    "solve_min_snap",
    "swap_in",
]
