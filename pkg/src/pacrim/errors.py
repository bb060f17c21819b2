"""Exception hierarchy shared across the toolkit."""


class PacrimError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PacrimError):
    """Invalid or unresolvable run configuration."""


class DataError(PacrimError):
    """Bad, missing, or inconsistent input data."""


class NumericalError(PacrimError):
    """Numerical failure: non-convergence, degenerate sample, rank deficiency."""
