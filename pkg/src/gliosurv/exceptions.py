"""Exception hierarchy shared by every module."""


class GliosurvError(Exception):
    """Base class for all package errors."""


class ValidationError(GliosurvError, ValueError):
    """Input data violates a documented invariant."""


class ConfigurationError(GliosurvError, ValueError):
    """Parameters are inconsistent or out of range."""


class ShapeError(ValidationError):
    """Array shapes or volume geometries do not match."""


class DegenerateInputError(ValidationError):
    """Input is well-formed but mathematically degenerate (zero variance, coplanar points, ...)."""


class EmptyROIError(DegenerateInputError):
    """The requested region of interest contains no voxels."""


class DegenerateSubjectError(DegenerateInputError):
    """A subject could not be processed; carries the subject id."""

    def __init__(self, message, subject_id=None):
        if subject_id is not None:
            message = f"subject {subject_id}: {message}"
        super().__init__(message)
        self.subject_id = subject_id


class SingularDesignError(DegenerateInputError):
    """Design matrix is rank deficient."""


class ConvergenceError(GliosurvError, RuntimeError):
    """An iterative solver hit its iteration limit."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FormatError(GliosurvError, OSError):
    """A file could not be parsed; the message names the offending field."""


class UnsupportedFormatError(FormatError):
    """The file is valid but uses a feature outside the supported subset."""


class GeometryError(ConfigurationError):
    """Requested phantom geometry does not fit the volume."""
