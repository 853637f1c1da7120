"""Exception hierarchy shared by every cmrac module."""


class CmracError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(CmracError, ValueError):
    pass


class NotHurwitz(CmracError, ValueError):
    pass


class NotSymmetric(CmracError, ValueError):
    pass


class SingularSystem(CmracError, ArithmeticError):
    pass


class RankDeficient(CmracError, ArithmeticError):
    pass


class NonFiniteDerivative(CmracError, ArithmeticError):
    """Raised by the RK4 kernel; ``stage`` is 1..4."""

    def __init__(self, stage, t):
        super().__init__(f"non-finite derivative at RK4 stage {stage} (t={t!r})")
        self.stage = stage
        self.t = t


class BarrierBreach(CmracError, ArithmeticError):
    """The tracking error reached the barrier boundary e'Pe >= xi'^2."""

    def __init__(self, etpe, xi_prime_sq):
        super().__init__(f"barrier breached: e'Pe={etpe:.6g} >= xi'^2={xi_prime_sq:.6g}")
        self.etpe = etpe
        self.xi_prime_sq = xi_prime_sq


class MissingX0(CmracError, ValueError):
    pass


class EmptyTrajectory(CmracError, ValueError):
    pass


class ConfigError(CmracError, ValueError):
    """Malformed or invalid configuration; ``where`` names the field or line."""

    def __init__(self, message, where=None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


class InfeasibleConfig(CmracError):
    pass


class SimulationAbort(CmracError):
    """A run stopped early. ``trajectory`` holds everything logged up to the abort."""

    def __init__(self, message, trajectory=None, metrics=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.metrics = metrics


class BarrierAbort(SimulationAbort):
    pass


class NonFiniteState(SimulationAbort):
    pass
