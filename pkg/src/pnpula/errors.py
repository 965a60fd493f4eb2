"""Exception hierarchy shared by all modules."""


class PnPError(Exception):
    """Base class for every error raised by pnpula."""


class ConfigError(PnPError, ValueError):
    """Invalid parameter or configuration value."""


class DimensionError(PnPError, ValueError):
    """Array shapes do not match what an operation expects."""


class DivergenceError(PnPError, FloatingPointError):
    """A chain produced a non-finite iterate."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at iteration k={iteration}")


class TransportError(PnPError, IOError):
    """External denoiser protocol failure."""


class InsufficientDataError(PnPError, ValueError):
    """Not enough samples for the requested statistic."""


class DegenerateTraceError(PnPError, ValueError):
    """Trace has zero variance; autocorrelation is undefined."""


class SupportError(PnPError, ValueError):
    """Grid support too narrow for the requested smoothing."""


class TailUnderflowError(PnPError, FloatingPointError):
    """Evaluation point lies so far in the tails that the density underflows."""
