"""Exception types raised by the solvers and diagnostics."""


class MfgError(Exception):
    """Base class for every error raised by :mod:`mfgmarket`."""


class InvalidParameterError(MfgError, ValueError):
    pass


class InvalidDataError(MfgError, ValueError):
    """Initial or terminal data violate a sign, mass or shape requirement."""


class GridTooSmallError(MfgError, ValueError):
    pass


class GridMismatchError(MfgError, ValueError):
    pass


class NegativeDensityError(MfgError, ValueError):
    pass


class MassMismatchError(MfgError, ValueError):
    pass


class InfeasiblePairError(MfgError, ValueError):
    pass


class CflViolationError(MfgError, RuntimeError):
    """The explicit upwind part of a time step would lose monotonicity."""


class NewtonDivergenceError(MfgError, RuntimeError):
    pass


class NoConvergenceError(MfgError, RuntimeError):
    """Picard iteration hit ``max_iter``; the last iterate is attached."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
