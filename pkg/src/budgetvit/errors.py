"""Exception types shared across the package."""


class BudgetVitError(Exception):
    """Base class for all budgetvit errors."""


class ShapeError(BudgetVitError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class ArgumentError(BudgetVitError, ValueError):
    """A scalar argument (epsilon, label, target size, ...) is out of range."""


class ConfigError(BudgetVitError, ValueError):
    """A configuration value or combination of values is invalid."""


class StateError(BudgetVitError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class DataError(BudgetVitError, RuntimeError):
    """Dataset ingestion failed (unreadable path, corrupt record, empty class)."""


class CheckpointError(BudgetVitError, RuntimeError):
    """A checkpoint file could not be written or read back."""


class NonFiniteLossError(BudgetVitError, RuntimeError):
    """Training produced a non-finite loss and was aborted."""
