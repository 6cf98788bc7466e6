"""Exception hierarchy; the CLI maps each class to an exit status."""


class DsslError(Exception):
    exit_code = 1


class ConfigError(DsslError, ValueError):
    """Bad configuration or dimension mismatch."""
    exit_code = 2


class UsageError(DsslError, ValueError):
    """An operation was called outside its preconditions."""
    exit_code = 2


class DegenerateInputError(UsageError):
    pass


class NumericError(DsslError, ArithmeticError):
    """NaN/Inf surfaced by a computation, or training divergence."""
    exit_code = 3


class MissingInputError(DsslError, FileNotFoundError):
    exit_code = 4
