"""Exception hierarchy.

Each leaf class carries the CLI exit code it maps to (2 configuration,
3 data, 4 numeric).
"""


class SpiceError(Exception):
    exit_code = 1


class ConfigurationError(SpiceError, ValueError):
    """Malformed model, network or run configuration."""

    exit_code = 2


class InvalidMechanismError(ConfigurationError):
    """An error mechanism that cannot have generated the data."""


class DataError(SpiceError, ValueError):
    exit_code = 3


class DegenerateDataError(DataError):
    """A column that should vary is constant."""


class IngestionError(DataError):
    """A CSV file does not match the declared schema."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class InconsistencyError(DataError):
    """Observed table is incompatible with the stated error mechanism."""


class UnsupportedInterventionError(DataError):
    """Positivity fails at the requested treatment level."""


class InsufficientDataError(DataError):
    pass


class MergeError(DataError):
    pass


class NumericError(SpiceError, ArithmeticError):
    exit_code = 4


class NonInvertibleMechanismError(NumericError):
    pass


class CollinearityError(NumericError):
    pass


class UnidentifiedError(NumericError):
    """A closed-form denominator vanished at working tolerance."""


class CoverageError(NumericError):
    """Quadrature window misses too much probability mass."""


class TrainingDivergedError(NumericError):
    def __init__(self, message, epoch=None, snapshot=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
        self.snapshot = snapshot


class ExtrapolationWarning(UserWarning):
    """Causal function evaluated outside the observed treatment range."""
