"""Exception hierarchy shared across the package.

File-format failures are split into distinct classes so callers (and the
CLI exit-code mapping) can tell corruption modes apart without string
matching.
"""


class AnyBcqError(Exception):
    """Base class for all package errors."""


class UsageError(AnyBcqError):
    """Invalid argument or precondition violation (CLI exit code 2)."""


class FileFormatError(AnyBcqError):
    """Base class for container/tensor file problems (CLI exit code 3)."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FileFormatError):
    """Magic matched but the format version is unsupported."""


class UnsupportedDtypeError(FileFormatError):
    """Tensor file declares a dtype code this build does not handle."""


class TruncatedError(FileFormatError):
    """File ends before the payload its header promises."""


class ChecksumError(FileFormatError):
    """Container checksum does not match the stored value."""


class NonFiniteError(AnyBcqError):
    """NaN or Inf encountered where finite values are required (exit 4)."""
