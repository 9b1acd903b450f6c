"""Exception hierarchy shared across the package."""


class CrashsevError(Exception):
    """Base class for every error raised by this package."""


class ParseError(CrashsevError, ValueError):
    """An input token (severity, area or lighting code) was not recognized."""


class SchemaError(CrashsevError, ValueError):
    """A file or config does not match its declared schema."""


class ConfigError(CrashsevError, ValueError):
    """A run configuration is malformed; the message names the offending key."""


class RowError(CrashsevError, ValueError):
    """A single CSV row could not be converted; carries the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DomainError(CrashsevError, ValueError):
    """Input is well formed but outside the operation's domain."""


class ArgumentError(CrashsevError, ValueError):
    """Invalid argument value (bad index, base, probability, dimension, ...)."""


class NumericError(CrashsevError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


class SpecDataMismatch(CrashsevError, KeyError):
    """A model specification references a covariate the data does not carry."""

    def __str__(self):
        return str(self.args[0]) if self.args else "spec/data mismatch"


class ConvergenceError(CrashsevError, RuntimeError):
    """The optimizer stopped without meeting its convergence criteria.

    ``best`` holds the best parameter vector seen and ``loglik`` its value.
    """

    def __init__(self, message, best=None, loglik=None):
        super().__init__(message)
        self.best = best
        self.loglik = loglik


class SingularHessianError(CrashsevError, RuntimeError):
    """The information matrix is singular; the specification is over-parameterized."""


class ConsistencyError(CrashsevError, ValueError):
    """Test inputs violate an identity they must satisfy."""


class ResourceError(CrashsevError, MemoryError):
    """A request would exceed the allowed amount of work."""
