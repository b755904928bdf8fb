"""Exception types raised across the toolkit."""


class SemlocError(Exception):
    """Base class for all toolkit errors."""


class DegenerateInput(SemlocError, ValueError):
    """Input geometry does not determine the requested primitive."""


class BehindCamera(SemlocError, ValueError):
    """A point with non-positive depth was handed to the projector."""


class AboveHorizon(SemlocError, ValueError):
    """The back-projected ray never reaches the ground ahead of the camera."""


class RangeExceeded(SemlocError, ValueError):
    """The ground intersection lies beyond the configured maximum range."""


class NoIntersection(SemlocError, ValueError):
    """The exact ray does not intersect the ground plane in front of the camera."""


class FormatError(SemlocError, ValueError):
    """Malformed record in one of the text formats."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(SemlocError, ValueError):
    """Unsupported format version in a file header."""


class Insufficient(SemlocError, ValueError):
    """Fewer elements available than requested."""


class EmptyGround(SemlocError, ValueError):
    """The labeled cloud contains no ground points."""


class Degenerate(SemlocError, ValueError):
    """Histogram mass concentrated in a single bin."""


class NotAPole(SemlocError, ValueError):
    """Cluster rejected by the tilt or height test."""


class TooFewPoints(SemlocError, ValueError):
    """Cluster smaller than the minimum pole size."""


class NoOverlap(SemlocError, ValueError):
    """Two trajectories share no matching timestamps."""


class TooShort(SemlocError, ValueError):
    """Trajectory shorter than the requested frame gap."""


class NonFinite(SemlocError, ArithmeticError):
    """Residuals or Jacobian entries became NaN or infinite."""
