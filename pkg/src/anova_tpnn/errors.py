"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TpnnError(Exception):
    exit_code = 1


class ConfigError(TpnnError, ValueError):
    """Invalid configuration, arguments, or model structure."""

    exit_code = 1


class DataError(TpnnError, ValueError):
    """Unreadable, malformed or inconsistent input data or files."""

    exit_code = 2


class NumericError(TpnnError, ArithmeticError):
    """Non-finite losses or parameters."""

    exit_code = 3
