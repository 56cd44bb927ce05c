"""polycam: collision-avoidance maneuver design via polynomial maps.

Builds arbitrary-order Taylor expansions of collision probability as a
function of impulsive or low-thrust control perturbations, then solves the
resulting polynomial program with an order-escalating sequence of greedy
linearizations. Supports two-body, J2 and circular restricted three-body
dynamics.
"""

from .dapoly import AlgebraConfig, TaylorPoly
from .dynamics import DynamicsModel, PropagationConfig, SpacecraftState
from .conjunction import BPlaneProjection, ConjunctionEvent
from .mapbuilder import ControlSchedule, PocMap, build_poc_map
from .solver import ManeuverSolution, SolverConfig, solve_recursive
from .validate import ValidationReport, validate_solution

__version__ = "0.1.0"

__all__ = [
    "AlgebraConfig",
    "TaylorPoly",
    "DynamicsModel",
    "PropagationConfig",
    "SpacecraftState",
    "BPlaneProjection",
    "ConjunctionEvent",
    "ControlSchedule",
    "PocMap",
    "build_poc_map",
    "ManeuverSolution",
    "SolverConfig",
    "solve_recursive",
    "ValidationReport",
    "validate_solution",
    "__version__",
]
