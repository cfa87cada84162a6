"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AbstainBenchError(Exception):
    """Base class for every error raised by abstain_bench."""


class InvalidInputError(AbstainBenchError, ValueError):
    pass


class ShapeError(AbstainBenchError, ValueError):
    pass


class InvalidHyperparameterError(AbstainBenchError, ValueError):
    pass


class TrainingDivergedError(AbstainBenchError, RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class DegenerateSelectionError(AbstainBenchError, ValueError):
    pass


class UnsupportedTaskError(AbstainBenchError, ValueError):
    pass


class DatasetTooSmallError(AbstainBenchError, ValueError):
    pass


class CsvParseError(AbstainBenchError, ValueError):
    def __init__(self, row: int, column: int | str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric feature {value!r} at row {row}, column {column}")


class SingleClassError(AbstainBenchError, ValueError):
    pass


class UncalibratedModelError(AbstainBenchError, RuntimeError):
    pass


class ConfigError(AbstainBenchError, ValueError):
    pass


class NoDataError(AbstainBenchError, FileNotFoundError):
    pass
