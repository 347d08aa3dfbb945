"""Exception types raised by the solver stack."""


class InvFractureError(Exception):
    """Base class for all package errors."""


class DomainError(InvFractureError, ValueError):
    """A stretch or inverse stretch outside the potential's domain."""


class ConstraintViolation(InvFractureError, ValueError):
    """The inverse strain went negative beyond tolerance."""


class NonConvergence(InvFractureError, RuntimeError):
    """Iteration limit hit before the KKT residual reached tolerance.

    The best iterate is attached as ``state`` so callers can inspect it.
    """

    def __init__(self, message, state=None, lam=None):
        super().__init__(message)
        self.state = state
        self.lam = lam


class SingularTangent(InvFractureError, RuntimeError):
    """Factorization of the bordered KKT matrix failed."""


class NotFound(InvFractureError, LookupError):
    """No eigenvalue crossing in the scanned stretch range."""


class DegenerateFace(InvFractureError, ValueError):
    """A broken interval consisting of a single node."""


class WindowExceeded(InvFractureError, ValueError):
    """A translation pushes a floating region out of its admissible window."""
