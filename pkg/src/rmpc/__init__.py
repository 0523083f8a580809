"""Robust MPC for linear systems with state- and input-dependent uncertainty."""
from .conic import ConicProgram, Solution, Status, solve
from .controller import Certificate, ControllerConfig, RobustMPC, certify_vertices, offline_init
from .dynamics import ContinuousLTI, DiscreteLTI, ImpulseStacks, discretize_impulsive, impulse_stacks
from . import exceptions
from .exceptions import *  # noqa: F403
from .polytope import Polytope, box
from .satellite import SatelliteParams, build_satellite, build_satellite_config
from .sim import Experiment, MonteCarloStats, Trace, fuel_rate, monte_carlo, run_closed_loop
from .tightening import TighteningTable, build_table
from .uncertainty import (DependencyTerm, NormKind, UncertaintyModel, conservative_model, dual_norm,
                          hull_bound, phi_eval, sample, zero_model)

__all__ = [
    "ConicProgram", "Solution", "Status", "solve",
    "Certificate", "ControllerConfig", "RobustMPC", "certify_vertices", "offline_init",
    "ContinuousLTI", "DiscreteLTI", "ImpulseStacks", "discretize_impulsive", "impulse_stacks",
    "Polytope", "box",
    "SatelliteParams", "build_satellite", "build_satellite_config",
    "Experiment", "MonteCarloStats", "Trace", "fuel_rate", "monte_carlo", "run_closed_loop",
    "TighteningTable", "build_table",
    "DependencyTerm", "NormKind", "UncertaintyModel", "conservative_model", "dual_norm", "hull_bound",
    "phi_eval", "sample", "zero_model",
]
__all__ += [name for name in dir(exceptions) if not name.startswith("_") and isinstance(getattr(exceptions, name), type)]

__version__ = "0.1.0"
