"""Exception types shared across the package.

Argument errors (bad values passed by the caller) raise plain ValueError;
the classes here mark failures with a domain meaning, so the CLI can map
them to exit codes: config problems exit 2, data problems 3, compute
problems 4.
"""


class RulforgeError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(RulforgeError):
    """A delimited file does not match its declared column schema."""


class ParseError(RulforgeError):
    """A cell could not be parsed, or held a non-finite value."""


class OrderingError(RulforgeError):
    """Timestamps within a unit are not strictly increasing at 1 Hz."""


class DataError(RulforgeError):
    """Input data cannot support the requested operation."""


class ShapeError(RulforgeError):
    """Tensor shapes do not chain through an operation or network."""


class TrainingError(RulforgeError):
    """Training diverged or failed; carries the epoch where it happened."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EnsembleError(RulforgeError):
    """A fold-ensemble member failed during prediction."""


class ConfigError(RulforgeError):
    """A run configuration file is invalid."""
