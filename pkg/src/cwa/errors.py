"""Exception hierarchy shared by every module."""


class CwaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CwaError, ValueError):
    pass


class DomainError(CwaError, ValueError):
    pass


class VocabularyError(CwaError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class CapacityError(CwaError, ValueError):
    pass


class ProtocolError(CwaError, ValueError):
    pass


class DegenerateTraceError(CwaError, ValueError):
    pass


class FormatError(CwaError, ValueError):
    pass


class CorruptionError(FormatError):
    """Payload shorter or longer than the header promises."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
