"""Exception types raised across the package."""

from __future__ import annotations


class AmilError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(AmilError, ValueError):
    pass


class InsufficientDataError(AmilError, ValueError):
    pass


class InvalidSpecError(AmilError, ValueError):
    pass


class ShapeError(AmilError, ValueError):
    pass


class InvalidBagError(AmilError, ValueError):
    pass


class InvalidLabelError(AmilError, ValueError):
    pass


class HeadMismatchError(AmilError, ValueError):
    pass


class InvalidGridError(AmilError, ValueError):
    pass


class HeterogeneousEnsembleError(AmilError, ValueError):
    pass


class TrainingDivergedError(AmilError, RuntimeError):
    """Raised when a loss or gradient turns non-finite.

    ``history`` holds every epoch that completed with finite losses.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class InsufficientPointsError(AmilError, ValueError):
    pass


class NonConvexFitError(AmilError, ValueError):
    pass


class InfiniteInformationError(AmilError, ValueError):
    pass


class DegenerateDesignError(AmilError, ValueError):
    pass


class PseudoExperimentError(AmilError, RuntimeError):
    def __init__(self, chunk_index: int, cause: Exception):
        super().__init__(f"pseudo-experiment {chunk_index} failed: {cause}")
        self.chunk_index = chunk_index
        self.cause = cause


class FormatError(AmilError, ValueError):
    pass


class IntegrityError(AmilError, ValueError):
    pass


class SchemaVersionError(AmilError, ValueError):
    pass


class ConfigError(AmilError, ValueError):
    pass
