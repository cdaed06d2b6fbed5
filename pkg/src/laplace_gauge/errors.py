"""Exception hierarchy for the diagnostic."""


class DiagnosticError(Exception):
    """Base class for all errors raised by this package."""


class NotNegativeDefinite(DiagnosticError):
    """The log-Hessian at the mode has a nonnegative eigenvalue."""


class NonFiniteHessian(DiagnosticError):
    """The supplied Hessian contains NaN or infinite entries."""


class NonFiniteLogF(DiagnosticError):
    """A log-integrand evaluation returned +inf or NaN.

    Carries the index of the offending interrogation point.
    """

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite log f at interrogation point {index}")


class DimensionMismatch(DiagnosticError):
    """Objects built for different dimensions were combined."""


class GramNotPD(DiagnosticError):
    """Gram matrix factorization failed.

    Carries the reciprocal condition estimate; retry with jitter=True to add
    a diagonal nugget of 1e-12 times the max diagonal entry.
    """

    def __init__(self, rcond, message=None):
        self.rcond = rcond
        super().__init__(
            message
            or f"Gram matrix is not numerically positive definite (rcond ~ {rcond:.3e}); "
            "consider jitter=True"
        )


class ReducedSystemSingular(DiagnosticError):
    """The orbit-reduced quadrature system is singular."""


class DegenerateCalibration(DiagnosticError):
    """The calibration function is indistinguishable from a Gaussian on this grid."""


class OptimizationDiverged(DiagnosticError):
    """Every start of the length-scale optimizer failed."""


class AllCandidatesFailed(DiagnosticError):
    """Every length-scale candidate produced a failed Gram factorization."""


class AllWeightsZero(DiagnosticError):
    """All importance-sampling weights underflowed to zero."""


class CellCountOverflow(DiagnosticError):
    """A quadrature request would exceed the cell budget."""
