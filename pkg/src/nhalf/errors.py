"""Exception hierarchy shared across the package.

Everything derives from NHalfError so callers can catch the package as a
whole; the value-like errors also derive from ValueError.
"""


class NHalfError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(NHalfError, ValueError):
    """An input value is outside the operation's domain (e.g. not +-1)."""


class ShapeError(NHalfError, ValueError):
    """Tensor or kernel geometry is inconsistent."""


class ConfigError(NHalfError, ValueError):
    """An architecture configuration is invalid or yields empty shapes."""


class CompileError(NHalfError, ValueError):
    """A checkpoint cannot be compiled; message carries block/channel."""


class InputError(NHalfError, ValueError):
    """An external input (image, manifest) is unreadable or empty."""


class FormatError(NHalfError, ValueError):
    """A container file violates the expected binary layout."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Container version is not supported."""


class TruncatedError(FormatError):
    """File ends before a declared section is complete."""


class ChecksumError(FormatError):
    """Trailing checksum does not match the file contents."""
