import json


class DerainError(Exception):
    """Base error: carries a human-readable detail and a process exit code"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def to_line(self) -> str:
        """Single-line, machine-parsable form used by the CLI"""
        return json.dumps({"error": type(self).__name__, "detail": self.detail})


class ShapeMismatchError(DerainError):
    def __init__(self, what: str, left, right):
        super().__init__(f"{what}: shape {tuple(left)} vs {tuple(right)}")
        self.left = tuple(left)
        self.right = tuple(right)


class InvalidArgumentError(DerainError):
    pass


class NonFiniteError(DerainError):
    pass


class GraphError(DerainError):
    pass


class OddSizeError(DerainError):
    pass


class ChannelCountError(DerainError):
    pass


class CheckpointFormatError(DerainError):
    pass


class CheckpointVersionError(DerainError):
    pass


class CheckpointTruncatedError(DerainError):
    pass


class CheckpointShapeError(DerainError):
    pass


class SynthError(DerainError):
    pass


class DatasetError(DerainError):
    pass


class DatasetModelMismatchError(DerainError):
    pass


class MissingPairError(DerainError):
    pass


class ConfigError(DerainError):
    exit_code = 2


class WindowSizeError(DerainError):
    pass
