"""Exception taxonomy shared by the library and the CLI.

Each class maps onto one CLI exit code, so library code raises these
directly instead of generic ValueError/RuntimeError.
"""


class GuideflowError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(GuideflowError):
    """Invalid configuration: bad dimensions, keys, modes, or ranges."""

    exit_code = 2


class DataError(GuideflowError):
    """Missing or malformed data files, empty datasets, format violations."""

    exit_code = 3


class TrainingError(GuideflowError):
    """Numerical failure during optimization (non-finite loss or gradients)."""

    exit_code = 4


class IntegrationError(GuideflowError):
    """Numerical failure during ODE integration."""

    exit_code = 4
