"""Exception types shared across the package."""


class GprOdomError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GprOdomError, ValueError):
    """Input violates a documented precondition."""


class UndefinedSimilarityError(GprOdomError, ValueError):
    """Cosine distance requested for an all-zero operand."""


class RankDeficiencyError(GprOdomError):
    """Factor graph leaves some state directions unconstrained.

    ``directions`` lists human-readable names of the free directions.
    """

    def __init__(self, message, directions=()):
        super().__init__(message)
        self.directions = list(directions)


class DataLoadError(GprOdomError):
    """A dataset directory or file could not be loaded."""


class EvaluationError(GprOdomError):
    """Trajectory evaluation is impossible (e.g. no associated pairs)."""
