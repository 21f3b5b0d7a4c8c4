"""Exception types shared across the package."""


class SnofError(Exception):
    pass


class DimensionMismatch(SnofError, ValueError):
    pass


class NoConvergence(SnofError, RuntimeError):
    pass


class SingularInterconnection(SnofError, ArithmeticError):
    pass


class DimensionChainBroken(DimensionMismatch):
    pass


class DegenerateColumn(SnofError, ValueError):
    pass


class DivergedLoss(SnofError, FloatingPointError):
    pass


class NoEquilibrium(SnofError, RuntimeError):
    pass


class UnsupportedChannel(SnofError, ValueError):
    pass


class SolverFailure(SnofError, RuntimeError):
    pass


class FalsifiedCertificate(SnofError, AssertionError):
    """A certified loop produced a trajectory that violates the certificate."""

    def __init__(self, message, trajectory=None, values=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.values = values


class DivergenceDetected(SnofError, FloatingPointError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class MalformedRow(SnofError, ValueError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class SaturatedEquilibrium(UserWarning):
    pass


class ShortUnit(UserWarning):
    pass
