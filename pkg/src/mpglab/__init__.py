"""Multi-agent linear systems under heterogeneous model-predictive-game control."""

from mpglab._backend import BACKEND
from mpglab.certify import (CertificateProblem, InfeasibilityReport, StabilityCertificate,
                            build_problem, find_certificate, lmi_value, verify_certificate)
from mpglab.errors import (AssumptionError, CompactnessError, DimensionError, MonotonicityError,
                           MpgLabError, ProjectionError, RegularityError, ScenarioError,
                           SolverError)
from mpglab.game_model import (AffineVI, ConjectureSet, Dynamics, ParamCostBasis, StageCost,
                               assemble_affine_vi, build_prediction_matrices,
                               validate_assumptions)
from mpglab.mpg import ControllerBank, controller_action, realized_action
from mpglab.polytope import Polytope
from mpglab.scenario import Scenario
from mpglab.scenario import load as load_scenario
from mpglab.sensitivity import (equilibrium_sensitivity, kkt_jacobians, kkt_point,
                                prediction_sensitivity, theta_sweep)
from mpglab.simulate import TrajectoryLog, game_to_real_gap, lyapunov_monitor, run, step
from mpglab.vi_solver import VgneSolution, solve

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CertificateProblem", "InfeasibilityReport", "StabilityCertificate",
    "build_problem", "find_certificate", "lmi_value", "verify_certificate",
    "AssumptionError", "CompactnessError", "DimensionError", "MonotonicityError",
    "MpgLabError", "ProjectionError", "RegularityError", "ScenarioError", "SolverError",
    "AffineVI", "ConjectureSet", "Dynamics", "ParamCostBasis", "StageCost",
    "assemble_affine_vi", "build_prediction_matrices", "validate_assumptions",
    "ControllerBank", "controller_action", "realized_action", "Polytope", "Scenario",
    "load_scenario", "equilibrium_sensitivity", "kkt_jacobians", "kkt_point",
    "prediction_sensitivity", "theta_sweep", "TrajectoryLog", "game_to_real_gap",
    "lyapunov_monitor", "run", "step", "VgneSolution", "solve", "__version__",
]
