"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array or grid dimensions do not agree."""


class InvalidArgumentError(ValueError):
    """An argument lies outside its documented domain."""


class EmptyForegroundError(ValueError):
    """A label volume contains no foreground voxels."""


class NotReadyError(RuntimeError):
    """The scheduler has no recorded epochs to inspect yet."""


class GenerationError(RuntimeError):
    """A phantom could not be generated within the retry budget."""


class InvariantViolation(AssertionError):
    """An internal invariant was broken at runtime."""


class NiftiError(ValueError):
    """Base class for all NIfTI-1 read/write failures."""


class UnsupportedFormatError(NiftiError):
    pass


class UnsupportedVariantError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class CorruptFileError(NiftiError):
    pass


class RangeError(NiftiError):
    pass
