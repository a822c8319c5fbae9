"""Shared exception types."""

from mamc.container import IntegrityError

__all__ = [
    "MamcError",
    "IngestionError",
    "FormatError",
    "ConfigurationError",
    "ShapeError",
    "SizeError",
    "MaskError",
    "SpecError",
    "TransportError",
    "ProtocolError",
    "IntegrityError",
]


class MamcError(Exception):
    pass


class IngestionError(MamcError):
    """File could not be read as an image."""


class FormatError(MamcError):
    """Unsupported image format."""


class ConfigurationError(MamcError):
    """Invalid configuration value or undersized input set."""


class ShapeError(MamcError):
    """Tensor shape mismatch between operands."""


class SizeError(MamcError):
    """Input too small for the requested operation."""


class MaskError(MamcError):
    """Mask rectangle invalid for the target image."""


class SpecError(MamcError):
    """Invalid model specification."""


class TransportError(MamcError):
    """Remote oracle unreachable after retries."""


class ProtocolError(MamcError):
    """Remote oracle returned a malformed response."""
