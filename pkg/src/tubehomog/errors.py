"""Exception hierarchy shared by all modules."""


class TubeError(Exception):
    """Base class for every error raised by the package."""


class GeometryError(TubeError, ValueError):
    pass


class DegenerateBox(GeometryError):
    pass


class DisconnectedCell(GeometryError):
    pass


class ChannelMismatch(GeometryError):
    pass


class NonconformingSpacing(GeometryError):
    pass


class DisconnectedGrid(GeometryError):
    pass


class SolverError(TubeError, RuntimeError):
    pass


class NotConverged(SolverError):
    pass


class NonPositiveNullvector(SolverError):
    pass


class IncompatibleRHS(SolverError):
    pass


class ShiftSingular(SolverError):
    pass


class InvalidForNonzeroV(TubeError, ValueError):
    pass


class ContinuationBroken(SolverError):
    pass


class PoorFit(TubeError, ValueError):
    pass


class NonNegativeRealPart(TubeError):
    def __init__(self, theta, value):
        super().__init__(f"Re lambda_0({theta:g}) = {value:.3e} is not negative")
        self.theta = theta
        self.value = value


class ReflectionStuck(SolverError):
    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"path {path}: {message}")
        self.path = path


class SolverDiverged(SolverError):
    pass


class BoundaryContaminated(SolverError):
    pass


class UnresolvedChannel(TubeError, ValueError):
    pass


class InvariantViolation(TubeError):
    """A computed result breaks a property the method guarantees."""
