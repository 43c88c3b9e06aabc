"""
Exceptions for basis-completion.

All errors derive from CompletionError. Errors caused by bad arguments also
derive from ValueError so callers can keep catching the builtin.
"""

from __future__ import annotations


class CompletionError(Exception):
    """Base class for all library errors."""


class InvalidDimensionError(CompletionError, ValueError):
    """A size parameter (n, r, L, ...) is out of range."""


class InvalidInputError(CompletionError, ValueError):
    """An argument has an invalid value (zero vector, negative tolerance, ...)."""


class InvalidWeightsError(CompletionError, ValueError):
    """A weight matrix has a nonpositive diagonal entry."""


class InvalidConfidenceError(CompletionError, ValueError):
    """The confidence exponent beta is not greater than 1."""


class DimensionError(CompletionError, ValueError):
    """Matrix shapes do not match."""


class ZeroMatrixError(CompletionError, ValueError):
    """An operation needs a nonzero matrix."""


class SingularBasisError(CompletionError):
    """The Gram matrix of a basis is singular or too ill-conditioned."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class BasisTooLargeError(CompletionError):
    """The dense Gram matrix would exceed the memory guard."""


class EmptySampleError(CompletionError, ValueError):
    """An operator was applied with an empty sample set."""


class PartitionError(CompletionError, ValueError):
    """Batch sizes do not partition the sample set."""


class EmptyPartitionError(CompletionError, ValueError):
    """The golfing scheme was given zero batches."""


class DimensionCapError(CompletionError):
    """The tangent space is larger than the configured cap."""


class InfeasibleConstraintsError(CompletionError):
    """Duplicated sample indices carry inconsistent measurements."""


class ConfigError(CompletionError, ValueError):
    """An experiment configuration is invalid."""


class ExperimentIOError(CompletionError, OSError):
    """The experiment output cannot be written."""
