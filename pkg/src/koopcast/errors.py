"""Exception hierarchy. The CLI maps each class to a process exit code."""


class KoopcastError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(KoopcastError, ValueError):
    """Invalid configuration, missing prerequisite artifact, or shape mismatch."""

    exit_code = 2


class DataError(KoopcastError, ValueError):
    """Malformed, empty, or non-finite input data."""

    exit_code = 3


class NumericalError(KoopcastError, ArithmeticError):
    """Ill-conditioned solve, divergence, or a refused decomposition."""

    exit_code = 4


class IllConditionedError(NumericalError):
    pass


class NonDiagonalizableError(NumericalError):
    pass
