"""Exception hierarchy shared by every fluxobs module."""


class FluxObsError(Exception):
    """Base class for all errors raised by fluxobs."""


class InvalidParametersError(FluxObsError, ValueError):
    """Machine parameters or derived coefficients violate positivity."""


class InconsistentStateError(FluxObsError, ValueError):
    """A PMU sample cannot have been produced by any physical state."""


class ObservabilityLossError(FluxObsError, ArithmeticError):
    """Y1 = x3^2 + x4^2 fell below the gate, so A(t) is undefined."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g} s)")
        self.t = t


class ReconstructionDomainError(FluxObsError, ValueError):
    """arcsin argument of the rotor-angle reconstruction left [-1, 1]."""


class IntegrationDivergedError(FluxObsError, ArithmeticError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g} s)")
        self.t = t


class ConfigError(FluxObsError, ValueError):
    """Malformed or invalid scenario configuration."""
