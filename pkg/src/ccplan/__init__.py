"""Chance-constrained trajectory planning for an ego vehicle following an uncertain target."""

from .chance import ChanceMode, ChanceParams, TargetModel, det_equiv_bounds, normal_quantile
from .errors import (
    ConstructionError,
    DomainError,
    GeometryError,
    NumericError,
    PlannerError,
    ScenarioError,
    ShapeError,
)
from .scenario import Scenario, make_risky_scenario, make_urban_scenario
from .solve import SolveOptions, SolveReport, Status, initial_guess, solve
from .transcribe import TimeGrid, build_continuous_nlp, build_discrete_nlp
from .vehicle import EgoState, Limits, Weights

__version__ = "0.1.0"


def main(argv=None):
    from .cli import main as _main

    return _main(argv)


__all__ = [
    "ChanceMode", "ChanceParams", "ConstructionError", "DomainError", "EgoState", "GeometryError",
    "Limits", "NumericError", "PlannerError", "Scenario", "ScenarioError", "ShapeError",
    "SolveOptions", "SolveReport", "Status", "TargetModel", "TimeGrid", "Weights",
    "build_continuous_nlp", "build_discrete_nlp", "det_equiv_bounds", "initial_guess", "main",
    "make_risky_scenario", "make_urban_scenario", "normal_quantile", "solve",
]
