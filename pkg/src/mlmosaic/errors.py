"""Exception hierarchy shared across the package."""


class MosaicError(Exception):
    """Base class for all errors raised by this package."""


class ImageFormatError(MosaicError):
    """An image file could not be decoded."""


class MalformedHeaderError(ImageFormatError):
    """The file header does not parse as a supported image format."""


class TruncatedPayloadError(ImageFormatError):
    """The header promises more pixel data than the file contains."""


class UnsupportedFormatError(ImageFormatError):
    """Recognized container, but a depth or variant we do not handle."""


class SingularTransformError(MosaicError):
    """The linear part of a motion model is (numerically) non-invertible."""


class InsufficientOverlapError(MosaicError):
    """Too few evaluable pixels to form a meaningful normal system."""


class RegistrationFailureError(MosaicError):
    """Registration could not be carried out at any resolution level."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class ConfigError(MosaicError):
    """A run configuration violates its own constraints."""
