"""Domain error types.

Every error raised by the library on bad domain input derives from
SplatterError so the CLI can map them to exit code 1; anything else
escaping is a bug.
"""


class SplatterError(Exception):
    """Base class for all domain errors."""


class NonPositiveDepth(SplatterError):
    """Point projected with camera-frame depth <= 1e-6."""


class DimensionMismatch(SplatterError):
    """Image/grid/camera dimensions disagree."""


class SingularCovariance(SplatterError):
    """2D covariance determinant below 1e-12 after low-pass dilation."""


class BoxOutsideFrustum(SplatterError):
    """Face box center falls outside the source image."""


class CameraCenterMismatch(SplatterError):
    """Operation requires cameras sharing an optical center."""


class NonPositiveScale(SplatterError):
    """Scale correction factor must be > 0."""


class LengthMismatch(SplatterError):
    """Paired lists differ in length."""


class NonFiniteLoss(SplatterError):
    """A loss term evaluated to NaN or infinity."""


class EmptyOverlap(SplatterError):
    """Depth-scale solve found no overlap between prediction and mask."""


class EmptyMask(SplatterError):
    """Metric mask selects no pixels."""


class ShapeMismatch(SplatterError):
    """Frame stacks are not aligned."""


class RejectionExhausted(SplatterError):
    """Camera placement rejection sampling exceeded its attempt budget."""


class IoError(SplatterError):
    """Dataset or blob I/O failed."""


class ValidationError(SplatterError):
    """Dataset validation found an invariant violation."""
