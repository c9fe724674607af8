"""Exception types, grouped by how callers should react.

Input and configuration problems (bad values, malformed files, missing
priors) derive from :class:`InputError`; numerical failures during model
evaluation or training derive from :class:`NumericalError`. The CLI maps the
two groups onto distinct exit codes.
"""


class ChokeVfmError(Exception):
    """Base class for all package errors."""


class InputError(ChokeVfmError, ValueError):
    """Bad user-supplied value, file, or configuration."""


class DomainError(InputError):
    """An argument violates a documented precondition."""


class ValidationError(InputError):
    """A data record violates its invariants."""


class ConfigurationError(InputError):
    """Incomplete or inconsistent configuration."""


class IngestionError(InputError):
    """Malformed input file; carries the offending row when known."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NumericalError(ChokeVfmError, RuntimeError):
    """Evaluation or training produced unusable numbers."""


class EvaluationError(NumericalError):
    """A model evaluation left its valid domain."""


class TrainingError(NumericalError):
    """Optimization diverged; carries epoch/batch context in the message."""


class ContractError(ChokeVfmError, TypeError):
    """An internal API was called against its contract."""
