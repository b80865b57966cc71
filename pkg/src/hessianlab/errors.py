"""Exception hierarchy shared across the package.

Two broad families matter to callers: precondition violations (bad inputs,
mapped to CLI exit code 2) and numerical failures (non-convergence or loss
of validity mid-computation, exit code 3).
"""


class HessianLabError(Exception):
    """Base class for all package errors."""


class PreconditionError(HessianLabError):
    """Input violates a documented precondition."""


class NumericError(HessianLabError):
    """A numerical procedure failed to converge or lost validity."""


class SingularQuotientError(PreconditionError):
    """Denominator symmetric polynomial vanishes in a quotient operator."""


class AdmissibilityError(PreconditionError):
    """Data left the ellipticity cone required by the operation."""


class StencilError(PreconditionError):
    """A finite-difference stencil cannot be completed at the node."""


class ClippingError(PreconditionError):
    """A sub-level set does not fit inside the target grid box."""


class DegenerateDomainError(PreconditionError):
    """Masked domain is empty or too small to carry a field."""


class UnboundedSublevelError(PreconditionError):
    """A sub-level set escaped the probe range during extraction."""


class SafeguardError(NumericError):
    """Damped Newton could not take any admissible step."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergenceError(NumericError):
    """Iteration cap reached before the tolerance was met."""

    def __init__(self, message, report=None, gap=None):
        super().__init__(message)
        self.report = report
        self.gap = gap
