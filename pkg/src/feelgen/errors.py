"""Exception hierarchy shared across the package."""
from __future__ import annotations


class FeelgenError(Exception):
    """Base class for all errors raised by feelgen."""


class ParameterError(FeelgenError, ValueError):
    """An argument is outside its admissible range."""


class DimensionError(ParameterError):
    """Array shapes do not agree."""


class SymmetryError(DimensionError):
    """A symmetric-only routine received an asymmetric matrix."""


class ConnectivityError(FeelgenError):
    """A graph is disconnected where a connected one is required."""


class CapacityError(FeelgenError):
    """The source dataset cannot supply the requested partition."""


class NumericError(FeelgenError, ArithmeticError):
    """A computation produced a non-finite value or failed to converge."""


class UndefinedBoundError(FeelgenError):
    """A generalization bound is undefined for the given constants."""


class ConfigError(FeelgenError):
    """A configuration file or value is invalid."""

    def __init__(self, message: str, *, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
