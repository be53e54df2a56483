"""Exception hierarchy.

The CLI maps these onto exit codes, so every failure raised by the library
should derive from :class:`TalentiError`.
"""


class TalentiError(Exception):
    """Base class for all library errors."""


class DomainError(TalentiError, ValueError):
    """An input lies outside the domain of an operation."""


class ConfigurationError(TalentiError, ValueError):
    """Inconsistent grids, shapes or run parameters."""


class FieldFormatError(TalentiError, ValueError):
    """A field file does not follow the CSV schema."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(TalentiError, ArithmeticError):
    """Non-finite values appeared during a computation."""

    def __init__(self, message, time_index=None):
        if time_index is not None:
            message = f"{message} at time level {time_index}"
        super().__init__(message)
        self.time_index = time_index


class RangeError(NumericalError):
    """A level lies outside the range of a profile."""


class MonotonicityError(NumericalError):
    """A profile expected to be strictly decreasing is not."""


class DegenerateLevelError(NumericalError):
    """Bisection on the Lagrange multiplier failed to isolate a level."""

    def __init__(self, message, interval=None):
        if interval is not None:
            message = f"{message}: flat interval [{interval[0]!r}, {interval[1]!r}]"
        super().__init__(message)
        self.interval = interval


class ContractError(TalentiError):
    """A verified property or certificate did not hold."""


class SerializationError(TalentiError):
    """A report could not be serialized (missing field, non-finite value)."""
