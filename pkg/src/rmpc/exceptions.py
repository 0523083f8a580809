"""Exception hierarchy shared across the package."""


class RMPCError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(RMPCError, ValueError):
    pass


class GeometryError(RMPCError):
    pass


class UnboundedSet(GeometryError):
    pass


class EmptySet(GeometryError):
    pass


class DegenerateSet(GeometryError):
    pass


class InvalidBounds(GeometryError, ValueError):
    pass


class NonFiniteResult(RMPCError, ArithmeticError):
    pass


class SolverError(RMPCError):
    """The conic backend broke down (numerical failure, unknown status)."""


class TableMismatch(RMPCError):
    """A tightening table was built for different data than it is used with."""


class RecedingHorizonInfeasible(RMPCError):
    """The online problem has no solution at the current state.

    When raised from a closed-loop simulation the partial trace is attached
    as ``trace``.
    """

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace


class HorizonTooLarge(RMPCError):
    """No certified invariant set could be found for the requested horizon."""


class InsufficientData(RMPCError, ValueError):
    pass


class InvalidParams(RMPCError, ValueError):
    pass
