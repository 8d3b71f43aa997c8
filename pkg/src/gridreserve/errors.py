"""Exception hierarchy shared across the package."""


class GridReserveError(Exception):
    """Base class for every error raised by gridreserve."""


class ParseError(GridReserveError):
    pass


class ValidationError(GridReserveError):
    pass


class TopologyError(ValidationError):
    pass


class DuplicateName(GridReserveError):
    pass


class UnknownIndex(GridReserveError):
    pass


class DomainError(GridReserveError, ValueError):
    pass


class NumericalError(GridReserveError):
    def __init__(self, message, iterations=0, residual=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InfeasibleCase(GridReserveError):
    def __init__(self, message, aggregate=None):
        super().__init__(message)
        self.aggregate = aggregate


class NegativeCost(ValidationError):
    pass


class VertexBudgetExceeded(GridReserveError):
    pass


class InfeasibleRobust(GridReserveError):
    def __init__(self, message, vertex=None):
        super().__init__(message)
        self.vertex = vertex


class BisectionNotConverged(GridReserveError):
    pass


class DegenerateActiveSet(GridReserveError):
    pass


class NoFeasibleGain(GridReserveError):
    def __init__(self, message, alpha=0.0):
        super().__init__(message)
        self.alpha = alpha


class NotPSD(GridReserveError):
    pass


class InsufficientSamples(GridReserveError):
    pass


class NonConvergence(GridReserveError):
    pass


class NoFeasibleSigma(GridReserveError):
    pass


class UnknownEvent(GridReserveError, KeyError):
    pass


class SignError(GridReserveError, ValueError):
    pass
