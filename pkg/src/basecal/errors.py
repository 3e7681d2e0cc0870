"""Exception types raised across the toolkit.

Every library error derives from :class:`BasecalError` so callers can catch
one base class at pipeline boundaries. Argument-validation errors also derive
from :class:`ValueError` to stay friendly to generic callers.
"""


class BasecalError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(BasecalError):
    """A point-cloud file could not be parsed.

    Carries the offending location so I/O failures are actionable.
    """

    def __init__(self, path, message, line=None, offset=None):
        loc = ""
        if line is not None:
            loc = f", line {line}"
        elif offset is not None:
            loc = f", byte {offset}"
        super().__init__(f"{path}{loc}: {message}")
        self.path = str(path)
        self.line = line
        self.offset = offset


class UnsupportedFormatError(BasecalError):
    """File format (or format variant) is not one this reader supports."""


class EmptyInputError(BasecalError, ValueError):
    """An operation that needs at least one element got none."""


class TooFewPointsError(BasecalError, ValueError):
    """A geometric operation got fewer points than it needs."""


class NonPositiveVoxelError(BasecalError, ValueError):
    """Voxel size must be strictly positive."""


class InvalidRangeError(BasecalError, ValueError):
    """A numeric range parameter is empty or inverted."""


class LengthMismatchError(BasecalError, ValueError):
    """Two paired sequences have different lengths."""


class EmptyCloudError(BasecalError, ValueError):
    """A point cloud required to be non-empty is empty."""


class DegenerateCorrespondencesError(BasecalError):
    """Fewer than three matched point pairs; no rigid update possible."""


class DegenerateCovarianceError(BasecalError):
    """Point distribution is rank-deficient; principal axes are undefined."""


class DegenerateGeometryError(BasecalError):
    """Input points are collinear/coplanar where a full-rank fit is needed."""


class AmbiguousPoseError(BasecalError):
    """Several near-tied alignments disagree; the pose is not trustworthy."""


class ViewpointInsideModelError(BasecalError, ValueError):
    """The virtual camera sits inside the model's bounding sphere."""


class RoiTooSparseError(BasecalError):
    """The cropped region of interest holds too few points to register."""


class AllShotsRejectedError(BasecalError):
    """Every shot in a multi-shot estimate failed or was filtered out."""


class InsufficientMotionError(BasecalError):
    """Motion pairs do not span two distinct rotation axes."""


class IllConditionedError(BasecalError):
    """The linear system is too ill-conditioned to trust its solution."""


class GimbalLockError(BasecalError):
    """Euler extraction is degenerate; the requested angles are not unique."""


class NoMatchesError(BasecalError):
    """No point fell under the matching distance gate."""


class ShapeMismatchError(BasecalError, ValueError):
    """Two reports cover different shapes or metric sets."""


class ZeroVolumeError(BasecalError, ValueError):
    """A bounding box is degenerate (zero volume)."""
