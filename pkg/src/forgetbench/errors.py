"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
IncompleteRunError -> 4.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GradientError(RuntimeError):
    """Misuse of the reverse-mode tape (double backward, detached loss, ...)."""


class NumericOverflowError(FloatingPointError):
    """A forward operation produced NaN or Inf from finite inputs."""


class EmptySequenceError(ValueError):
    """An attention mask selects no positions at all."""


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


class DataError(ValueError):
    """Malformed or missing dataset input."""


class IncompleteRunError(RuntimeError):
    """A report was requested from a directory with no complete run records."""
