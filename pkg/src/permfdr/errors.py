"""Exception types shared across the package.

All inherit from ValueError so callers that do not care about the exact
failure can catch one base class.
"""


class DimMismatchError(ValueError):
    """Volumes, masks, or stacks have incompatible grid dimensions."""


class MalformedHeaderError(ValueError):
    """File header is not a parseable single-volume NIfTI-1 header."""


class UnsupportedDatatypeError(ValueError):
    """NIfTI datatype code outside the supported scalar set."""


class TruncatedDataError(ValueError):
    """File holds fewer voxel bytes than its header promises."""


class NonFiniteVoxelError(ValueError):
    """Loaded voxel data contains NaN or infinity."""


class EmptyMaskError(ValueError):
    """No voxel passed the mask threshold."""


class MissingPValueError(ValueError):
    """A cluster is missing a value required at this pipeline stage."""


class InvalidPValueError(ValueError):
    """A probability lies outside its legal range."""


class DuplicateAmbiguityError(ValueError):
    """Published and analyzed tables cannot be paired unambiguously."""
