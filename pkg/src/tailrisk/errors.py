"""Exception types shared across the package."""


class TailRiskError(Exception):
    """Base class for all package-specific errors."""


class DomainError(TailRiskError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GammaPoleError(DomainError):
    """The gamma function was evaluated at a nonpositive integer."""


class DegenerateDataError(TailRiskError, ValueError):
    """The data admits no interior optimum (e.g. a single repeated value)."""


class InsufficientDataError(TailRiskError, ValueError):
    """Fewer observations than the operation requires."""


class RankDeficiencyError(TailRiskError, ValueError):
    """The design matrix does not have full column rank."""


class SeparationError(TailRiskError, ValueError):
    """A dummy column perfectly predicts zero counts, so its MLE diverges."""

    def __init__(self, column: str):
        super().__init__(
            f"column {column!r} is 1 only on observations with zero counts; "
            "its coefficient has no finite maximum-likelihood estimate"
        )
        self.column = column


class FitConvergenceError(TailRiskError, RuntimeError):
    """An iterative fit failed to converge.

    Carries the objective trace so callers can inspect the iteration path.
    """

    def __init__(self, message: str, trace=None, best=None):
        super().__init__(message)
        self.trace = [] if trace is None else list(trace)
        self.best = best
