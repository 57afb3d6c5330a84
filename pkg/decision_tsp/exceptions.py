"""
Exception hierarchy for decision-tsp.
"""

from typing import Optional


class DecisionTSPError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(DecisionTSPError):
    """Tensor shapes do not fit the requested operation."""


class AutodiffError(DecisionTSPError):
    """The tape was used in a way reverse mode cannot serve."""


class InvalidInstanceError(DecisionTSPError):
    """A TSP instance, decision instance or tour is malformed."""


class ConfigError(DecisionTSPError):
    """A configuration value or key is invalid."""


class InvariantError(DecisionTSPError):
    """An internal invariant was violated."""


class DataError(DecisionTSPError):
    """Input or output data could not be read, written or trusted."""

    def __init__(self, message: str, path: Optional[str] = None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class DatasetFormatError(DataError):
    """A dataset file is malformed."""

    def __init__(self, message: str, line: int, record: Optional[int] = None,
                 path: Optional[str] = None):
        where = f"line {line}"
        if record is not None:
            where += f" (record {record})"
        super().__init__(f"{where}: {message}", path)
        self.line = line
        self.record = record


class CheckpointError(DataError):
    """A checkpoint cannot be loaded."""

    def __init__(self, message: str, parameter: Optional[str] = None,
                 path: Optional[str] = None):
        if parameter is not None:
            message = f"parameter '{parameter}': {message}"
        super().__init__(message, path)
        self.parameter = parameter


class TsplibFormatError(DataError):
    """A TSPLIB file is malformed."""

    def __init__(self, message: str, line: Optional[int] = None,
                 path: Optional[str] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, path)
        self.line = line


class UnsupportedFormatError(DataError):
    """The input uses a format variant that is not supported."""


class CapacityError(DataError):
    """An exact oracle was asked to solve an instance above its size limit."""
