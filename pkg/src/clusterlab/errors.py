"""Exception types raised across the lab."""


class ClusterLabError(Exception):
    pass


class ResolutionError(ClusterLabError):
    """Grid too coarse for the requested operation."""


class FactorizationError(ClusterLabError):
    """The second-order symbol is not elliptic at some node."""


class SymbolClassError(ClusterLabError):
    """A symbol left the bracket a ~ lam, d^2_xi a ~ -1/lam.

    ``node`` holds the (t, x, xi) indices of the first offending sample.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class StepSizeError(ClusterLabError):
    """Unitarity drift exceeded tolerance; ``suggested_dt`` is a safer step."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class BandError(ClusterLabError):
    """Input has spectral content outside the supported band."""
