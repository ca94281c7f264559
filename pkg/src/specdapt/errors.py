"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SpecdaptError(Exception):
    exit_code = 1


class ValidationError(SpecdaptError, ValueError):
    """Bad input: violated precondition, invalid config, shape mismatch."""

    exit_code = 2


class CorruptFileError(SpecdaptError):
    """Bad magic bytes, truncated payload or unreadable sidecar."""

    exit_code = 3


class ConfigHashMismatch(ValidationError):
    pass


class DegenerateStatisticsError(SpecdaptError):
    exit_code = 4


class NonFiniteError(SpecdaptError, FloatingPointError):
    """NaN or Inf produced during a computation."""

    exit_code = 2


class TemplateError(ValidationError):
    """Template rendering produced no usable mass."""
