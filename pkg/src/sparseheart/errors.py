"""Exception types raised across the package."""


class SparseHeartError(Exception):
    """Base class for all package-specific errors."""


class CollinearLandmarks(SparseHeartError):
    """The three cardiac landmarks do not span a triangle."""


class EmptyPlan(SparseHeartError):
    """A slice plan with no SAX slices and no LAX views was requested."""


class NoIntersections(SparseHeartError):
    """A moving slice has no valid intersection pixels with any other slice."""


class GridMismatch(SparseHeartError):
    """Two volumes or fields that must share a grid do not."""


class GridTooSmall(SparseHeartError):
    """The grid is too small for an interior-stencil computation."""


class MissingMask(SparseHeartError):
    """Sparse-mode registration was requested without a coverage mask."""


class EmptySurface(SparseHeartError):
    """No cell of the scalar field crosses the isovalue."""


class EmptySet(SparseHeartError):
    """A set-distance metric was asked for an empty label set."""


class OverlapConflict(SparseHeartError):
    """Phantom chambers overlap in a way priorities cannot resolve."""


class NiftiFormatError(SparseHeartError):
    """The file is not an uncompressed little-endian NIfTI-1 single file."""
