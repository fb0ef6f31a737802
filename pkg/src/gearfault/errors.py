"""Exception types raised by gearfault."""

from __future__ import annotations

from typing import Optional


class GearfaultError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(GearfaultError, ValueError):
    """An argument or precondition was violated."""


class DimensionError(GearfaultError, ValueError):
    """Array shapes, column counts or sample alignment do not match."""


class FormatError(GearfaultError, ValueError):
    """A file does not follow the expected layout."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class ParseError(FormatError):
    """A cell could not be parsed as a number."""

    def __init__(self, message: str, row: Optional[int], column: Optional[str]):
        super().__init__(message, column=column)
        self.row = row


class TrainingError(GearfaultError, RuntimeError):
    """Training could not complete (e.g. the loss diverged)."""

    def __init__(self, message: str, epoch: Optional[int] = None, fold: Optional[int] = None):
        super().__init__(message)
        self.epoch = epoch
        self.fold = fold

    def with_fold(self, fold: int) -> "TrainingError":
        err = TrainingError(f"fold {fold}: {self}", epoch=self.epoch, fold=fold)
        err.__cause__ = self
        return err
