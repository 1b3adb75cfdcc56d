"""Feedback-linearized dual-mode MPC for input-constrained car-like vehicles."""
from .exceptions import (DegenerateSegmentError, FlmpcError, InfeasibleQPError,
                         InfeasibleSpeedError, InvariantViolationError, MaxIterationsError,
                         NotCertifiedError, StallError, SteeringSingularityError)
from .invariant import TerminalSet, build_terminal_set, check_rpi, terminal_control
from .linearization import constraint_polytope, inscribed_radii, worst_case_disc
from .mpc import FLMPCController, MpcConfig, assemble_step_qp, build_condensed, build_polygons
from .qp import ActiveSetSolver, QpProblem, QpSolution
from .simulation import SimResult, load_scenario, metrics, run_closed_loop, timing_run
from .trajectory import ReferenceTrajectory, Waypoint, interpolate, interpolate_max_speed
from .vehicle import CarInput, CarParams, CarState, step_discrete

__version__ = "0.1.0"

__all__ = [
    "ActiveSetSolver", "CarInput", "CarParams", "CarState", "DegenerateSegmentError",
    "FLMPCController", "FlmpcError", "InfeasibleQPError", "InfeasibleSpeedError",
    "InvariantViolationError", "MaxIterationsError", "MpcConfig", "NotCertifiedError",
    "QpProblem", "QpSolution", "ReferenceTrajectory", "SimResult", "StallError",
    "SteeringSingularityError", "TerminalSet", "Waypoint", "assemble_step_qp",
    "build_condensed", "build_polygons", "build_terminal_set", "check_rpi",
    "constraint_polytope", "inscribed_radii", "interpolate", "interpolate_max_speed",
    "load_scenario", "metrics", "run_closed_loop", "step_discrete", "terminal_control",
    "timing_run", "worst_case_disc",
]
