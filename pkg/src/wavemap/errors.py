"""Exception hierarchy shared by the solvers and the command-line front end."""


class WavemapError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(WavemapError, ValueError):
    """Array lengths disagree with the radial grid."""


class PoisonedStateError(WavemapError, ValueError):
    """A field contains NaN or Inf."""


class StepDivergenceError(WavemapError, RuntimeError):
    """The Crank-Nicolson fixed-point iteration failed to converge.

    This is a numerical failure of the time step, distinct from physical
    blow-up; ``residual`` is the last iterate change in the sup norm.
    """

    def __init__(self, message, residual=float("nan"), t=float("nan")):
        super().__init__(message)
        self.residual = residual
        self.t = t


class OrderUndefinedError(WavemapError, ArithmeticError):
    """Self-convergence errors are not monotone, so no order can be measured."""


class BranchNotFoundError(WavemapError, RuntimeError):
    """No self-similar branch with the requested crossing count was bracketed."""


class AmbiguousCrossingError(WavemapError, ValueError):
    """A profile touches the crossing line tangentially within tolerance."""


class IntegrationError(WavemapError, RuntimeError):
    """An ODE integration stopped before reaching its endpoint."""

    def __init__(self, message, location=float("nan")):
        super().__init__(message)
        self.location = location


class RangeBoundaryError(WavemapError, RuntimeError):
    """A spectral root sits on the edge of the search range; widen it."""


class BracketError(WavemapError, ValueError):
    """A bisection bracket does not straddle the singular/dispersed boundary."""


class EstimationError(WavemapError, RuntimeError):
    """A fit (for example the collapse time) could not be performed."""


class InsufficientDataError(WavemapError, ValueError):
    """An evolution record lacks the snapshots an analysis needs."""


class ConfigError(WavemapError, ValueError):
    """Invalid or unknown configuration keys."""


class DependencyError(WavemapError, RuntimeError):
    """An upstream artifact required by a figure export is missing."""
