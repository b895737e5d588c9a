"""Exception hierarchy.

Every error raised by the package derives from :class:`AnacilError`; the CLI
maps the three families below onto exit codes.
"""

from __future__ import annotations

import contextlib


class AnacilError(Exception):
    exit_code = 1

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details
        self.context: str | None = None

    def __str__(self) -> str:
        msg = super().__str__()
        return f"[{self.context}] {msg}" if self.context else msg


class ConfigError(AnacilError):
    exit_code = 2


class DataError(AnacilError):
    exit_code = 3


class NumericalError(AnacilError):
    exit_code = 4


class DimensionMismatch(NumericalError, ValueError):
    pass


class NonFinite(NumericalError, ValueError):
    pass


class SolveFailure(NumericalError):
    pass


class EmptyTask(DataError, ValueError):
    pass


class UnknownTask(AnacilError, KeyError):
    pass


class OutOfRange(AnacilError, ValueError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class HeaderMismatch(DataError):
    pass


class BadLabel(DataError):
    pass


class IndivisibleSplit(DataError, ValueError):
    pass


class MissingClass(DataError):
    pass


@contextlib.contextmanager
def session_context(task_id: int, phase: str):
    """Tag any package error escaping the block with the session it came from."""
    try:
        yield
    except AnacilError as err:
        if err.context is None:
            err.context = f"task {task_id}, {phase}"
        raise
