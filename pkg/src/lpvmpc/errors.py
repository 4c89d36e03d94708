"""Exception types raised across the package."""


class LpvMpcError(Exception):
    """Base class for all package errors."""


class ConfigError(LpvMpcError, ValueError):
    """Invalid parameter or configuration value."""


class SingularGeometry(LpvMpcError):
    """The path-frame denominator ``1 - ye*k`` vanished."""


class DegenerateScheduling(LpvMpcError, ValueError):
    """A scheduling vector violates the LPV model's validity conditions."""


class DimensionMismatch(LpvMpcError, ValueError):
    pass


class InfeasibleBounds(LpvMpcError, ValueError):
    pass


class DivergenceDetected(LpvMpcError):
    """Training loss became non-finite. ``history`` holds the losses so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class DegenerateTargets(LpvMpcError, ValueError):
    pass


class EmptyLog(LpvMpcError, ValueError):
    pass
