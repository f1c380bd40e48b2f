"""Exception types shared across the package."""


class EjectaError(Exception):
    """Base class for all errors raised by this package."""


class ExprSyntaxError(EjectaError):
    """Malformed expression text.

    Carries the 0-based character position and a description of what was
    expected there.
    """

    def __init__(self, position, expected):
        self.position = position
        self.expected = expected
        super().__init__(f"syntax error at position {position}: expected {expected}")


class UnsupportedError(EjectaError):
    """Expression uses a feature outside the grammar (unknown identifier,
    non-constant power exponent)."""


class UnboundVariableError(EjectaError):
    """Evaluation encountered a variable with no binding."""


class EvalError(EjectaError):
    """Domain violation during evaluation (division by zero, log of a
    non-positive argument, ...).  Raised eagerly instead of letting NaN
    propagate into downstream iterations."""


class BoundaryZeroError(EjectaError):
    """Degree computation found (near-)vanishing field values on the
    boundary of the window; the degree is not admissible there."""


class NonConvergentError(EjectaError):
    """An adaptive refinement loop hit its depth limit without meeting
    its convergence contract."""


class SingularSystemError(EjectaError):
    """A linear solve required by a branch formula is singular, which
    signals a misclassified zero."""


class DegenerateForcingError(EjectaError):
    """The forcing mean vanishes, so the tangential branch curvature
    formula does not apply."""


class StallError(EjectaError):
    """Branch continuation step size underflowed.  The partial branch
    computed so far is attached as ``cloud``."""

    def __init__(self, message, cloud=None):
        self.cloud = cloud
        super().__init__(message)


class ProblemFormatError(EjectaError):
    """A problem file is malformed or inconsistent."""
