"""Exception and warning types shared across the package."""


class GWFormationError(Exception):
    """Base class for all package errors."""


class InputError(GWFormationError, ValueError):
    """Malformed or inconsistent input data."""


class CapabilityError(GWFormationError):
    """Requested mode is outside what an operation supports."""


class NumericError(GWFormationError, ArithmeticError):
    """An iterative procedure failed to reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class InfeasibleError(GWFormationError):
    """A steering problem has no feasible control sequence.

    Parameters
    ----------
    message : str
    agent : int or None
        Index of the first agent whose destination could not be reached.
    """

    def __init__(self, message, agent=None):
        super().__init__(message)
        self.agent = agent


class RankDeficiencyError(GWFormationError, ArithmeticError):
    """The finite-horizon Gramian is singular."""


class CertificateUndefinedError(GWFormationError, ArithmeticError):
    """The relaxation bound vanishes while the coupling objective does not."""


class InternalSolverError(GWFormationError, RuntimeError):
    """A conic solve that is feasible by construction reported otherwise."""


class NumericWarning(UserWarning):
    """A solve finished without reaching the requested tolerance."""


class MetricWarning(UserWarning):
    """A constructed cost matrix violates a metric axiom."""
