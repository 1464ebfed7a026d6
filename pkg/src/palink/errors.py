"""Exception types shared across the simulator."""


class PalinkError(Exception):
    """Base class for all palink errors."""


class ParseError(PalinkError):
    """A scenario or coefficient file could not be parsed."""


class ValidationError(PalinkError):
    """A configuration invariant is violated; message names the field."""


class QuadratureError(PalinkError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class DecompositionError(PalinkError):
    """A covariance factorization failed (matrix not PSD within tolerance)."""


class DelayExceedsCp(PalinkError):
    """A channel tap falls outside the cyclic prefix window."""


class LengthError(PalinkError):
    """Input sequence length is incompatible with the requested operation."""


class EigenFailure(PalinkError):
    """Generalized eigensolver did not converge."""


class SingularError(PalinkError):
    """Unregularized inversion of a rank-deficient Gram matrix."""


class MemoryNotSupported(PalinkError):
    """Operation defined only for memoryless models."""


class DimensionMismatch(PalinkError):
    """Matrix/vector dimensions do not line up."""


class ZeroEnergy(PalinkError):
    """Moment-ratio estimator denominator is below epsilon."""


class ZeroCoefficient(PalinkError):
    """Attempt to equalize with a (near) zero coefficient."""


class SingularInputCovariance(PalinkError):
    """Per-bin input autocorrelation not invertible even after loading."""


class InsufficientFrames(PalinkError):
    """Estimation ensemble has too few frames."""


class LayoutMismatch(PalinkError):
    """Subarray vector set does not match the group/RF-chain layout."""


class DegenerateVariance(PalinkError):
    """Distortion variance below epsilon while a model mismatch is present."""
