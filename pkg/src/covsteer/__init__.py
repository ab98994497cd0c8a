"""Optimal covariance steering for linear time-varying systems with martingale noise."""
from .controller import GainSchedule, gain_schedule, mean_feedforward, mean_trajectory, synthesize
from .errors import (
    CovsteerError,
    DomainError,
    FiniteEscapeError,
    InfeasibleProblemError,
    KernelMismatchError,
    ModelValidationError,
    NumericalError,
    OutOfScopeError,
    SimulationError,
    SolverError,
)
from .montecarlo import PathEnsemble, covariance_ode, empirical_moments, simulate
from .noise import (
    CompoundPoisson,
    ConstantJump,
    ExponentialJump,
    NoiseSpec,
    NormalJump,
    PrecomputedMartingale,
    TwoPointJump,
    Wiener,
    compensator_drift,
    effective_intensity,
)
from .propagation import check_controllability, controllability_matrix, gramian, transition
from .riccati import RiccatiSolution, closed_loop_transition, existence_condition, maximal_interval, pi_at
from .schedules import MatrixSchedule
from .steering import (
    boundary_map,
    closed_form_pi0,
    eta,
    jacobian,
    propagate_covariance,
    solve_pi0,
    solve_pi0_scalar,
)
from .system import LtvSystem, SteeringProblem, validate

__version__ = "0.1.0"

__all__ = [
    "CompoundPoisson",
    "ConstantJump",
    "CovsteerError",
    "DomainError",
    "ExponentialJump",
    "FiniteEscapeError",
    "GainSchedule",
    "InfeasibleProblemError",
    "KernelMismatchError",
    "LtvSystem",
    "MatrixSchedule",
    "ModelValidationError",
    "NoiseSpec",
    "NormalJump",
    "NumericalError",
    "OutOfScopeError",
    "PathEnsemble",
    "PrecomputedMartingale",
    "RiccatiSolution",
    "SimulationError",
    "SolverError",
    "SteeringProblem",
    "TwoPointJump",
    "Wiener",
    "boundary_map",
    "check_controllability",
    "closed_form_pi0",
    "closed_loop_transition",
    "compensator_drift",
    "controllability_matrix",
    "covariance_ode",
    "effective_intensity",
    "empirical_moments",
    "eta",
    "existence_condition",
    "gain_schedule",
    "gramian",
    "jacobian",
    "maximal_interval",
    "mean_feedforward",
    "mean_trajectory",
    "pi_at",
    "propagate_covariance",
    "simulate",
    "solve_pi0",
    "solve_pi0_scalar",
    "synthesize",
    "transition",
    "validate",
]
