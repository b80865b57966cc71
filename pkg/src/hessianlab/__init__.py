"""hessianlab: a desk-scale numerical laboratory for k-Hessian and
Hessian-quotient Dirichlet problems, sub-level-set geometry and the
growth conditions attached to Bernstein-type rigidity statements.
"""

from . import (
    calibration,
    candidates,
    fields,
    functionals,
    geometry,
    pipeline,
    polar,
    solver,
    symm,
)
from .errors import (
    AdmissibilityError,
    ClippingError,
    DegenerateDomainError,
    HessianLabError,
    NonConvergenceError,
    NumericError,
    PreconditionError,
    SafeguardError,
    SingularQuotientError,
    StencilError,
    UnboundedSublevelError,
)

__version__ = "0.1.0"
