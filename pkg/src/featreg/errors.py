"""Exception types shared across the package."""


class FeatRegError(Exception):
    """Base class for every error raised by this package."""


class BadMagic(FeatRegError):
    """File does not start with the FVOL magic bytes."""


class BadHeader(FeatRegError):
    """FVOL header is malformed or missing a required key."""


class TruncatedPayload(FeatRegError):
    """Payload byte count does not match the header shape and dtype."""


class IoFailure(FeatRegError):
    """Underlying file operation failed."""


class InvariantViolation(FeatRegError):
    """A container invariant (finiteness, shape, spacing) was broken."""


class DegenerateVolume(FeatRegError):
    """Resampling would round a dimension down to zero voxels."""


class SizeTooSmall(FeatRegError):
    """Cube padding target is smaller than an existing dimension."""


class EmptyStack(FeatRegError):
    """Slice feature stack contains no encoded slices."""


class RankDeficient(FeatRegError):
    """Fewer feature rows than requested principal components."""


class DimensionMismatch(FeatRegError):
    """Operands disagree in shape, channel count or spacing."""


class EmptyCostVolume(FeatRegError):
    """Cost volume has no control points or no displacement candidates."""


class EmptyMovingLesion(FeatRegError):
    """Moving lesion mask contains zero lesion voxels."""


class FieldTooSmall(FeatRegError):
    """Field has fewer than 3 voxels along an axis; no central differences."""


class NumericFailure(FeatRegError):
    """NaN or Inf appeared while running the pipeline."""
