"""Exception types raised by overlapkit."""


class OverlapKitError(Exception):
    """Base class for all overlapkit errors."""


class ParameterError(OverlapKitError, ValueError):
    """Invalid shape ratios, dimensions, or other input parameters."""


class SingularInputError(OverlapKitError, ValueError):
    """Evaluation requested at a singular point (zero eigenvalue, atom, edge)."""


class BranchError(OverlapKitError):
    """No square-root branch satisfies the decay and sign conditions."""


class SolverError(OverlapKitError):
    """Implicit-equation solver failed to converge.

    Carries the last residual magnitude in ``residual``.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class UnstableBoundaryError(OverlapKitError):
    """Boundary-value extrapolation did not contract along the eps schedule."""


class EdgeProximityError(OverlapKitError):
    """Requested point is too close to a spectral edge for bulk inversion."""


class NearSingularDenominatorError(OverlapKitError):
    """Common denominator of the propagated resolvents is numerically zero."""


class DegenerateSampleError(OverlapKitError):
    """A sampled matrix was numerically rank deficient too many times."""


class StiffnessError(OverlapKitError):
    """Eigenvalue step rejected down to the minimum step size.

    ``closest_gap`` holds the smallest eigenvalue gap at the failing step.
    """

    def __init__(self, message, closest_gap=None):
        super().__init__(message)
        self.closest_gap = closest_gap
