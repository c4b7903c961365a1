"""Exception hierarchy shared by all twinfuse modules."""


class TwinfuseError(Exception):
    """Base class for all errors raised by this package."""


class FrameMismatchError(TwinfuseError):
    """Transform/cloud frame chain does not line up."""


class InsufficientCorrespondencesError(TwinfuseError):
    """Fewer matched points than the solver needs."""


class InsufficientViewsError(TwinfuseError):
    """Fewer than two usable camera views for triangulation."""


class DegenerateGeometryError(TwinfuseError):
    """Point configuration is rank-deficient for the requested fit."""


class ConvergenceError(TwinfuseError):
    """Iterative refinement failed to reduce the error.

    Carries the last iterate so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ParameterError(TwinfuseError):
    """Invalid user-supplied parameter value."""


class NoOverlapError(TwinfuseError):
    """No correspondences survive the distance cutoff / no common time range."""


class BehindCameraError(TwinfuseError):
    """Point has non-positive depth in the camera frame."""


class CorrespondenceError(TwinfuseError):
    """No distance-consistent marker correspondence exists."""


class AmbiguityError(TwinfuseError):
    """Multiple distance-consistent correspondences exist.

    ``candidates`` lists the consistent index permutations.
    """

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = list(candidates)


class EmptySelectionError(TwinfuseError):
    """No person detections available in any camera."""


class UnknownEntityError(TwinfuseError):
    """A referenced camera/entity name is not known."""


class ManifestError(TwinfuseError):
    """Scene manifest is malformed, missing assets, or has an unknown version."""
