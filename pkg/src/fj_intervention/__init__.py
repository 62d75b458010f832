"""Optimal edge-weight interventions on Friedkin-Johnsen opinion networks."""

import sys

from loguru import logger

# remove default sink
logger.remove()
logger.add(sys.stdout, colorize=True, format="<green>{time}</green> <level>{message}</level>")

from fj_intervention.equilibrium import LinearSolveConfig, solve_equilibrium  # noqa: E402
from fj_intervention.feasible import FeasibleSet, project  # noqa: E402
from fj_intervention.graph import DecisionVector, NetworkTopology  # noqa: E402
from fj_intervention.hypergradient import hypergradient  # noqa: E402
from fj_intervention.nad import NadConfig, nad_run  # noqa: E402
from fj_intervention.optimizer import OptimizerConfig, SolveReport, optimize  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "DecisionVector",
    "FeasibleSet",
    "LinearSolveConfig",
    "NadConfig",
    "NetworkTopology",
    "OptimizerConfig",
    "SolveReport",
    "hypergradient",
    "nad_run",
    "optimize",
    "project",
    "solve_equilibrium",
]
