"""Exception hierarchy shared by the library and the command-line front end."""


class VSplinesError(Exception):
    """Base class for all errors raised by vsplines."""


class NoRootsError(VSplinesError, ValueError):
    """Raised when a constant or zero operator is asked for its roots."""


class NonInvertibleError(VSplinesError, ValueError):
    """Raised when an operator has a vanishing determinant."""


class VerificationError(VSplinesError):
    """Raised when a synthesized Green's matrix fails its symbolic check."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NullspaceError(VSplinesError):
    """Raised when the null-space extraction cannot find enough candidates."""


class SingularEvaluationError(VSplinesError, ValueError):
    """Raised when a distribution is evaluated on its singular support."""


class AdmissibilityError(VSplinesError, ValueError):
    """Raised when a measurement functional is not weak-* admissible."""


class AssumptionError(VSplinesError, ValueError):
    """Raised when a structural assumption (rank, injectivity) is violated."""


class QuadratureError(VSplinesError):
    """Raised when adaptive quadrature does not reach its error target."""


class SolverDivergenceError(VSplinesError):
    """Raised when the proximal gradient iterates become non-finite."""
