"""Formation steering with a Gromov-Wasserstein terminal cost.

Agents with linear dynamics are steered to destinations whose shape matches
a target, trading minimum control energy against a Gromov-Wasserstein
discrepancy.  The GW term is evaluated through a semidefinite relaxation
that also yields a global-optimality certificate.
"""
__version__ = "0.1.0"

from .errors import (
    CapabilityError,
    CertificateUndefinedError,
    GWFormationError,
    InfeasibleError,
    InputError,
    InternalSolverError,
    MetricWarning,
    NumericError,
    NumericWarning,
    RankDeficiencyError,
)
from .gw_problem import Coupling, GwValue, gw_objective, local_gw, oracle_gw, project_to_couplings, validate_coupling
from .mmspace import GroupSpec, LossTensor, MetricMatrix, PointCloud, build_loss_tensor, graph_metric, pairwise_cost
from .outer_opt import OuterConfig, OuterContext, OuterHistory, evaluate_J, fixed_coupling_gradient, minimize_J
from .sdp_relax import Certificate, LiftedPair, build_gw_sdp, certify, extract_assignment, solve_gw_sdp
from .steering import Box, LinearSystem, SteeringInstance, Trajectory, min_energy_oracle, solve_steering

__all__ = [
    "Box", "CapabilityError", "Certificate", "CertificateUndefinedError", "Coupling", "GWFormationError",
    "GroupSpec", "GwValue", "InfeasibleError", "InputError", "InternalSolverError", "LiftedPair",
    "LinearSystem", "LossTensor", "MetricMatrix", "MetricWarning", "NumericError", "NumericWarning",
    "OuterConfig", "OuterContext", "OuterHistory", "PointCloud", "RankDeficiencyError", "SteeringInstance",
    "Trajectory", "build_gw_sdp", "build_loss_tensor", "certify", "evaluate_J", "extract_assignment",
    "fixed_coupling_gradient", "graph_metric", "gw_objective", "local_gw", "min_energy_oracle", "minimize_J",
    "oracle_gw", "pairwise_cost", "project_to_couplings", "solve_gw_sdp", "solve_steering", "validate_coupling",
]
