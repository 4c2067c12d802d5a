"""Exception types shared across the package."""


class SmixError(Exception):
    """Base class for all scalarmix errors."""


class ConfigurationError(SmixError, ValueError):
    """Invalid grid, solver or experiment configuration."""


class DomainError(SmixError, ValueError):
    """A quantity is undefined for the given input (e.g. H^-1 norm of a field with mean)."""


class StepError(SmixError, RuntimeError):
    """A time step cannot be taken as configured."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class UnderResolvedError(StepError):
    """The transported field developed structure below the grid's resolving scale.

    The partially completed :class:`~scalarmix.solver.SimulationSeries` is kept
    on ``series`` so callers can still inspect the resolved part of the run.
    """

    def __init__(self, message, series=None):
        super().__init__(message)
        self.series = series


class CapacityError(SmixError):
    """A transport problem is too large for the exact solver."""
