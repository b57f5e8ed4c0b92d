"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``category`` so the CLI can
emit ``error: <category>: <message>`` lines with stable wording.
"""


class PolaroctaError(Exception):
    category = "internal"


class ConfigError(PolaroctaError):
    """Invalid configuration value or unknown option."""

    category = "config"


class ShapeError(PolaroctaError):
    """Tensor/array shapes incompatible with the requested operation."""

    category = "shape"


class DomainError(PolaroctaError):
    """Input outside the operation's mathematical domain."""

    category = "domain"


class UsageError(PolaroctaError):
    """API called in an unsupported way (e.g. backward on a non-scalar)."""

    category = "usage"


class FormatError(PolaroctaError):
    """Malformed file content (bad magic, truncated payload, ...)."""

    category = "format"


class NumericsError(PolaroctaError):
    """Non-finite value produced where finiteness is an invariant."""

    category = "numerics"


class TrainingAbort(PolaroctaError):
    """Training stopped on a non-recoverable numeric event."""

    category = "training"
