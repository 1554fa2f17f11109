"""Exception types shared across the package."""

from __future__ import annotations


class DispatchError(Exception):
    """Base class for all dispatchopt errors."""


class InputError(DispatchError):
    """Invalid or unparseable input data or configuration (CLI exit code 2)."""


class GraphParseError(InputError):
    """Road-graph file rejected at a specific line."""

    def __init__(self, path: object, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class UnsolvableIncidentError(DispatchError):
    """No reachable facility of the requested category (CLI exit code 3)."""


class StageError(DispatchError):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"pipeline failed at stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
