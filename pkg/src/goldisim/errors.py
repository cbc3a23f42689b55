"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI reports for it.
"""


class GoldisimError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(GoldisimError):
    exit_code = 2
    kind = "config"


class ParameterError(GoldisimError, ValueError):
    """Invalid argument value (ranges, sizes, malformed parameters)."""

    exit_code = 2
    kind = "parameter"


class DimensionError(ParameterError):
    pass


class DataIOError(GoldisimError, OSError):
    exit_code = 3
    kind = "io"


class DataShapeError(GoldisimError, ValueError):
    exit_code = 4
    kind = "data-shape"


class MetricUndefinedError(GoldisimError, ValueError):
    exit_code = 5
    kind = "metric-undefined"


class NumericalError(GoldisimError, ArithmeticError):
    exit_code = 6
    kind = "numerical"


class DiagnosticError(NumericalError):
    """A diagnostic was requested outside the regime where it is meaningful."""
