"""Exception types raised across the planner."""


class PlannerError(Exception):
    """Base class for all planner errors."""


class DomainError(PlannerError, ValueError):
    """An argument lies outside the operation's valid domain."""


class GeometryError(PlannerError):
    """A geometric query has no unique answer (e.g. ambiguous projection)."""


class ShapeError(PlannerError, ValueError):
    """Array dimensions do not match the problem layout."""


class NumericError(PlannerError, ArithmeticError):
    """An evaluator produced a non-finite value."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConstructionError(PlannerError):
    """A problem could not be built from the given inputs."""


class ScenarioError(PlannerError, ValueError):
    """Invalid scenario data; ``path`` names the offending JSON field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
