"""
Error hierarchy for PoseForge.

Every failure the pipeline can report has its own class so callers can
react to a specific condition. Input problems also derive from ValueError
and file problems from OSError, which keeps ``except ValueError`` style
handling working for library users.
"""


class PoseForgeError(Exception):
    """Base class for all PoseForge errors."""


# core
class NotARotation(PoseForgeError, ValueError):
    """Rotation matrix is not orthonormal."""


class Reflection(PoseForgeError, ValueError):
    """Rotation matrix has determinant -1."""


# geometry
class DegenerateMesh(PoseForgeError, ValueError):
    """Mesh has zero total surface area."""


class EmptyResult(PoseForgeError, ValueError):
    """A filter removed every point."""


class OutOfBounds(PoseForgeError, IndexError):
    """Pixel coordinates fall outside the image."""


class EmptyMask(PoseForgeError, ValueError):
    """Mask contains no pixel."""


class DegenerateTriplet(PoseForgeError, ValueError):
    """Source points are collinear; the rigid transform is not unique."""


# features
class RankDeficient(PoseForgeError, ValueError):
    """Fewer nonzero principal directions than requested."""


class ZeroVector(PoseForgeError, ValueError):
    """A descriptor half has (numerically) zero norm."""


class UnknownProvider(PoseForgeError, ValueError):
    """Descriptor provider kind is not recognized."""


class MissingProviderParameter(PoseForgeError, ValueError):
    """A provider was configured without a parameter it needs."""


class FileMissing(PoseForgeError, FileNotFoundError):
    """A descriptor or scene file does not exist."""


class IndexMismatch(PoseForgeError, ValueError):
    """Stored descriptor count does not match the request."""


class BadMagic(PoseForgeError, ValueError):
    """Feature file does not start with the expected magic bytes."""


class TruncatedFile(PoseForgeError, ValueError):
    """Feature file payload is shorter than its header announces."""


class DimMismatch(PoseForgeError, ValueError):
    """Descriptor dimensions disagree."""


class NoValidDepth(PoseForgeError, ValueError):
    """No pixel inside the mask carries a valid depth."""


# registration / refinement
class TooFewCorrespondences(PoseForgeError, ValueError):
    """Fewer than three correspondences with distinct target points."""


class NoValidHypothesis(PoseForgeError, RuntimeError):
    """Every sampled triplet was pruned or degenerate."""


class NoOverlap(PoseForgeError, RuntimeError):
    """ICP found no inlier at the initial pose nor after one iteration."""


# evalkit
class InstanceOutOfFrame(PoseForgeError, ValueError):
    """A synthetic instance is behind the camera or outside the image."""


class BehindCamera(PoseForgeError, ValueError):
    """A projected vertex has non-positive depth."""


# Errors that make a single mask unusable without invalidating the scene.
# A dimension mismatch is shared by every mask and propagates.
MASK_LEVEL_ERRORS = (
    EmptyMask,
    NoValidDepth,
    ZeroVector,
    TooFewCorrespondences,
    NoValidHypothesis,
    NoOverlap,
    EmptyResult,
    FileMissing,
    BadMagic,
    TruncatedFile,
)
