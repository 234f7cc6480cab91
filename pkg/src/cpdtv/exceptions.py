"""Exceptions raised by the cpdtv package."""

from __future__ import annotations


class CpdTvError(Exception):
    """Base class for package specific errors."""


class NumericalFailureError(CpdTvError, ArithmeticError):
    def __init__(self, iteration: int, value: float, *, restart: int | None = None) -> None:
        where = f"iteration {iteration}"
        if restart is not None:
            where += f" of restart {restart}"
        super().__init__(f"non-finite objective ({value}) at {where}")
        self.iteration = iteration
        self.restart = restart
        self.value = value


class Ct3FormatError(CpdTvError, ValueError):
    """A CT3 file is malformed or truncated."""


class UsageError(CpdTvError, ValueError):
    """Command line arguments could not be interpreted."""


__all__ = ["CpdTvError", "Ct3FormatError", "NumericalFailureError", "UsageError"]
