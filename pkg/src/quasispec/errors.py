"""Exception and warning types shared across the package."""


class QuasiSpecError(Exception):
    """Base class for every error raised by this package."""


class SingularLeadingBlock(QuasiSpecError):
    """The leading d-by-d block of the projection matrix is not invertible."""


class RankDeficient(QuasiSpecError):
    """The projection matrix does not have full row rank."""


class OverflowRisk(QuasiSpecError):
    """A requested index set would exceed the configured degree-of-freedom cap."""


class OutOfRange(QuasiSpecError):
    """An index, order, or parameter lies outside its admissible set."""


class ShapeMismatch(QuasiSpecError):
    """An array argument has the wrong shape or length."""


class NonFinite(QuasiSpecError):
    """Sampled values contain NaN or infinity."""


class NonPositiveDiagonal(QuasiSpecError):
    """A diagonal that must be strictly positive is not."""


class ZeroReference(QuasiSpecError):
    """The reference solution has zero norm, so relative errors are undefined."""


class NotPositiveDefinite(QuasiSpecError):
    """Condition estimation requires a positive definite operator."""


class NotConverged(QuasiSpecError):
    """Iteration budget exhausted before the residual tolerance was met.

    The best iterate found so far is attached as ``result`` so callers can
    inspect or persist it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class QuasiSpecWarning(UserWarning):
    """Base class for warnings emitted by this package."""


class BoundaryAmbiguity(QuasiSpecWarning):
    """A window edge passes within floating-point distance of a lattice plane.

    Membership of the affected indices is decided by the deterministic
    rounding of IEEE doubles; results are reproducible but may flip under
    a different rounding mode or precision.
    """


class BreakdownRecovered(QuasiSpecWarning):
    """Gram-Schmidt dropped a nearly dependent direction and continued."""
