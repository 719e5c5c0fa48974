from typing import Optional


class MathStructError(Exception):
    """Base class for every error raised by the package."""


# formula parsing

class TokenizeError(MathStructError):
    pass


class ParseError(MathStructError):
    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (token {index})")
        self.index = index


# corpus

class ArtifactIOError(MathStructError):
    """A file could not be read or written."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class EmptyDataset(MathStructError):
    pass


class DatasetFormatError(MathStructError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# inputs

class TooLong(MathStructError):
    pass


class SpanMismatch(MathStructError):
    pass


class PoolTooSmall(MathStructError):
    pass


# nn / train

class ShapeError(MathStructError):
    pass


class NonFiniteError(MathStructError):
    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class FormatError(MathStructError):
    """Checkpoint container is malformed or truncated."""


class VersionError(MathStructError):
    pass


class MissingLabel(MathStructError):
    pass


class ConfigError(MathStructError):
    pass


# evaluation

class ZeroVector(MathStructError):
    pass


class NoRelevant(MathStructError):
    pass
