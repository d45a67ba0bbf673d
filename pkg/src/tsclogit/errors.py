"""Exception hierarchy.

Schema problems (bad input files, bad configs) and numerical failures are kept
apart so the command line can map them onto distinct exit codes.
"""


class TSCLogitError(Exception):
    """Base class for all package errors.

    ``stage`` is filled in by the estimation pipeline when an error escapes
    one of its steps.
    """

    stage = None

    def __str__(self):
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class SchemaError(TSCLogitError, ValueError):
    """Malformed input data, configuration or dimension mismatch."""


class NumericalError(TSCLogitError, ArithmeticError):
    """Base class for failures of the numerical routines."""


class SeparationError(NumericalError):
    """Complete or quasi-complete separation in a logistic fit."""


class SingularMatrixError(NumericalError):
    """A Hessian or sandwich bread matrix is (numerically) singular."""


class NumericFailure(NumericalError):
    """Non-finite intermediate values."""


class PrecisionError(NumericalError):
    """Quadrature did not reach the requested relative precision."""


class UndefinedRatioError(NumericalError):
    """A closed-form log ratio has a zero count."""


class ConvergenceError(NumericalError):
    """Newton iterations did not converge."""


class EstimationError(NumericalError):
    """The estimation pipeline cannot proceed with the data at hand."""


class NumericalWarning(UserWarning):
    """Recoverable numerical issue (e.g. a clamped negative variance)."""
