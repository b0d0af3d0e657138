"""Exception types raised across the package."""


class LyricTrackError(Exception):
    """Base class for all package errors."""


class EmptyInput(LyricTrackError, ValueError):
    pass


class RateMismatch(LyricTrackError, ValueError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"sample rate mismatch: config expects {expected} Hz, audio is {actual} Hz")
        self.expected = expected
        self.actual = actual


class AudioFormatError(LyricTrackError, ValueError):
    pass


class FormatError(LyricTrackError, ValueError):
    """A binary file is malformed."""


class BadMagic(FormatError):
    pass


class TruncatedTensor(FormatError):
    def __init__(self, name: str, message: str = ""):
        super().__init__(f"tensor {name!r} is truncated" + (f": {message}" if message else ""))
        self.name = name


class ShapeError(LyricTrackError, ValueError):
    pass


class MissingTensor(LyricTrackError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing tensor"


class DimensionError(LyricTrackError, ValueError):
    pass


class EmptyAlignment(LyricTrackError, ValueError):
    pass


class CountError(LyricTrackError, ValueError):
    pass


class ParseError(LyricTrackError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SpecError(LyricTrackError, ValueError):
    pass
