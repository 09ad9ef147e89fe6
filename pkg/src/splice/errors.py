"""Exception hierarchy shared across the package."""


class SpliceError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(SpliceError):
    """An argument violates a documented precondition."""


class IoError(SpliceError):
    """A file could not be read or written."""


class FormatError(SpliceError):
    """A serialized artifact is malformed or corrupted."""


class EmptyArchive(SpliceError):
    """A search was issued against an archive with no eligible members."""
