"""Coreference-guided mind-map generation from documents."""

from .errors import ConfigurationError, CorefMapError, DomainError, ParseError, ShapeError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CorefMapError",
    "DomainError",
    "ParseError",
    "ShapeError",
    "ValidationError",
    "__version__",
]
