"""Exception types raised across mpglab."""


class MpgLabError(Exception):
    """Base class for all mpglab errors."""


class DimensionError(MpgLabError, ValueError):
    pass


class MonotonicityError(MpgLabError, ValueError):
    """Pseudo-gradient is not strongly monotone (symmetric part not positive definite)."""

    def __init__(self, message, eigenvalue=None, agent=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.agent = agent


class ProjectionError(MpgLabError, RuntimeError):
    pass


class SolverError(MpgLabError, RuntimeError):
    """VI solve did not reach tolerance; carries the last residual and agent index."""

    def __init__(self, message, residual=None, agent=None):
        super().__init__(message)
        self.residual = residual
        self.agent = agent


class RegularityError(MpgLabError):
    """LICQ or strict complementarity fails, so the KKT Jacobian cannot be inverted."""

    def __init__(self, message, kind, agent=None, index=None):
        super().__init__(message)
        self.kind = kind
        self.agent = agent
        self.index = index


class AssumptionError(MpgLabError):
    pass


class CompactnessError(AssumptionError):
    pass


class ScenarioError(MpgLabError, ValueError):
    """Scenario file violates the schema; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(message)
        self.path = path
