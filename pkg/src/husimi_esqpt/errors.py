"""Exception types shared across the package (the CLI maps them to exit codes)."""


class GridResolutionError(ValueError):
    """A quadrature grid is too coarse for the requested spin."""


class NumericalToleranceError(ArithmeticError):
    """A computed quantity violated a hard self-consistency tolerance."""


class CacheIntegrityError(RuntimeError):
    """An on-disk cache entry failed its checksum or layout checks."""


class CacheLockError(RuntimeError):
    """A cache lock could not be acquired within the timeout."""


class ConfigError(ValueError):
    """A job configuration is malformed or violates a precondition."""
