"""Exception hierarchy shared by all qgmap modules."""


class QGMapError(Exception):
    """Base class for every error raised by qgmap."""


class InputError(QGMapError, ValueError):
    """Rejected input: bad symbols, over-long reads, empty references."""


class FormatError(QGMapError):
    """A file does not follow the expected layout.

    ``line`` is the 1-based line number for text formats, when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorruptIndexError(FormatError):
    """Reference index is truncated or fails its checksum."""


class IndexVersionError(FormatError):
    """Reference index was written by an incompatible format version."""


class ConsistencyError(QGMapError, RuntimeError):
    """An internal invariant broke (e.g. a scatter overran its interval)."""


class HitOverflowError(InputError):
    """Filtration would emit more hits than the configured cap allows.

    Callers are expected to retry with a smaller read buffer.
    """
