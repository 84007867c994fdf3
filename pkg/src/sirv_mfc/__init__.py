"""Spatial SIRV mean-field control solved with G-prox PDHG."""

from .grid import ConfigurationError, GridSpec, KernelSpec
from .model import (
    Bump,
    ControlWeights,
    EpidemicParams,
    InitialData,
    SIRVModel,
    VaccineLogistics,
    check_feasibility,
    evaluate_cost,
    evaluate_monitor_lagrangian,
    kinetic_term,
)
from .operators import Preconditioner, apply_A, apply_adjoint, apply_linearized, kkt_residuals
from .pdhg import SolverConfig, check_M_positivity, root_plus, solve
from .state import POPULATIONS, DualVector, StateVector

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "GridSpec",
    "KernelSpec",
    "Bump",
    "ControlWeights",
    "EpidemicParams",
    "InitialData",
    "SIRVModel",
    "VaccineLogistics",
    "check_feasibility",
    "evaluate_cost",
    "evaluate_monitor_lagrangian",
    "kinetic_term",
    "Preconditioner",
    "apply_A",
    "apply_adjoint",
    "apply_linearized",
    "kkt_residuals",
    "SolverConfig",
    "check_M_positivity",
    "root_plus",
    "solve",
    "POPULATIONS",
    "DualVector",
    "StateVector",
]
