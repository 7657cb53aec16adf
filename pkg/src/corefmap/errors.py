"""Exception types shared across the package."""

from __future__ import annotations


class CorefMapError(Exception):
    """Base class for all package errors."""


class ShapeError(CorefMapError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(CorefMapError, ValueError):
    """A numeric input lies outside the domain of an operation."""


class ConfigurationError(CorefMapError, ValueError):
    """Invalid hyperparameter or missing run input."""


class ValidationError(CorefMapError, ValueError):
    """Input data violates a structural invariant."""


class ParseError(CorefMapError, ValueError):
    """A file could not be parsed; carries the offending line when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
