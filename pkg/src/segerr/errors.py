from pathlib import Path
from typing import Optional, Union


class SceneValidationError(ValueError):
    """A scene, label field, configuration or group definition breaks an invariant."""


class ShapeError(ValueError):
    """Matrices handed to the boundary-semantic block have inconsistent shapes."""


class InvariantViolation(RuntimeError):
    """An internal cross-check failed, e.g. grid and oracle disagree."""


class FormatError(ValueError):
    """A file could not be parsed.

    Args:
        path: The offending file
        message: What is wrong with it
        offset: Byte offset of the problem, for binary/structured containers
        line: 1-based line number of the problem, for line-oriented text files
    """

    def __init__(
        self,
        path: Union[str, Path],
        message: str,
        offset: Optional[int] = None,
        line: Optional[int] = None,
    ):
        self.path = Path(path)
        self.offset = offset
        self.line = line
        where = ""
        if offset is not None:
            where = f" at byte offset {offset}"
        elif line is not None:
            where = f" at line {line}"
        super().__init__(f"{self.path}{where}: {message}")
