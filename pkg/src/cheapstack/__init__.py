"""Open-loop Stackelberg games with a cheap-control follower.

Exact solution of the singularly perturbed optimality system, its first-order
boundary-function expansion, suboptimal controls and cost comparisons.
"""

from __future__ import annotations

from .asymptotics import Expansion1, build_expansion, eps_free_costs, hat_controls, tilde_controls
from .errors import (AssumptionError, CheapStackError, ConvergenceError, InvalidComplementError,
                     StructuralError, UnsolvableProblemError, UnsupportedConfigurationError)
from .evaluate import ControlPair, cost_of_pair, metrics_report, simulate_openloop
from .exact_solver import BvpSolution, general_weight_solve, solve
from .model import GameSpec, MatrixFunction, load_game, supply_chain_game, transform_game, validate_assumptions

__version__ = "0.1.0"

__all__ = [
    "AssumptionError", "BvpSolution", "CheapStackError", "ControlPair", "ConvergenceError", "Expansion1",
    "GameSpec", "InvalidComplementError", "MatrixFunction", "StructuralError", "UnsolvableProblemError",
    "UnsupportedConfigurationError", "build_expansion", "cost_of_pair", "eps_free_costs",
    "general_weight_solve", "hat_controls", "load_game", "metrics_report", "simulate_openloop", "solve",
    "supply_chain_game", "tilde_controls", "transform_game", "validate_assumptions",
]
