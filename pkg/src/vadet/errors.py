"""Exception types shared across the package."""


class VadetError(Exception):
    """Base class for all errors raised by this package."""


class SequenceGapError(VadetError):
    """A frame was pushed whose index does not follow the previous frame."""


class InsufficientHistoryError(VadetError):
    """An aggregation requested more frames than the buffer holds."""


class SchemaError(VadetError):
    """A structured file violates its schema.

    ``path`` identifies the offending element, e.g. ``frames[3][1].w``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class FrameFormatError(SchemaError):
    """A binary frame file is malformed; ``offset`` is the byte position."""

    def __init__(self, path: str, offset: int, message: str):
        self.offset = offset
        super(SchemaError, self).__init__(
            f"{path}: at byte offset {offset}: {message}"
        )
        self.path = path
