"""Exception hierarchy.

Validation problems derive from ``ValueError`` and numerical failures from
``ArithmeticError`` so callers (and the CLI exit-code mapping) can tell the
two apart without importing every class.
"""

from __future__ import annotations

import numpy as np


class HidVarError(Exception):
    """Base class for all package errors."""


class ValidationError(HidVarError, ValueError):
    pass


class DimensionError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    pass


class ModelError(ValidationError):
    """Parameters violate a model invariant (e.g. unstable transition matrix)."""


class AssumptionError(HidVarError, ArithmeticError):
    """A genericity assumption (e.g. distinct latent roots) is violated."""


class NumericError(HidVarError, ArithmeticError):
    pass


class ConditioningError(NumericError):
    def __init__(self, message: str, cond: float | None = None):
        self.cond = cond
        super().__init__(message)


class SamplingError(NumericError):
    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempts)")


class EstimationError(NumericError):
    def __init__(self, message: str, diagnostics: list | None = None):
        self.diagnostics = diagnostics or []
        super().__init__(message)


class StageError(HidVarError):
    """Wraps a failure inside a multi-stage pipeline with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


def is_numeric_failure(exc: BaseException) -> bool:
    if isinstance(exc, StageError):
        return is_numeric_failure(exc.cause)
    return isinstance(exc, ArithmeticError) or isinstance(exc, np.linalg.LinAlgError)
