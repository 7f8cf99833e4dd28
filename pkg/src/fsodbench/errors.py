"""Exception types shared across the toolkit."""


class FsodError(Exception):
    """Base class for all toolkit errors."""


class ParseError(FsodError, ValueError):
    """Raised when an input file cannot be decoded.

    ``offset`` is the byte offset of the failure when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class ValidationError(FsodError, ValueError):
    """Raised when decoded input violates a structural invariant.

    ``offenders`` holds the ids (or record indices) that failed validation.
    """

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class DegenerateEmbeddingError(FsodError, ValueError):
    """Raised when averaging synonym embeddings cancels to (near) zero."""
