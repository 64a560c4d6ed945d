"""Exception hierarchy shared across the package."""


class CovsteerError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CovsteerError):
    """Invalid model parameters or configuration file contents."""


class ContractError(CovsteerError):
    """A call violated a documented precondition (dimensions, ranges)."""


class LinearizationError(CovsteerError):
    """Jacobian evaluation produced non-finite entries."""


class DegenerateCovarianceError(CovsteerError):
    """Covariance fell below the positive-definiteness floor."""


class PropagationError(CovsteerError):
    """A propagated sigma point is non-finite."""


class PolicyExtractionError(CovsteerError):
    """Tried to extract a control law from a non-optimal solution."""


class SteeringInfeasibleError(CovsteerError):
    """The stage steering problem could not be solved.

    Carries the stage index at which the greedy loop aborted.
    """

    def __init__(self, stage: int, status: str, message: str = ""):
        self.stage = stage
        self.status = status
        detail = message or f"steering subproblem at stage {stage} ended with status '{status}'"
        super().__init__(detail)
