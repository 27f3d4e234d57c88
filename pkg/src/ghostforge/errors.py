"""Exception hierarchy shared by every ghostforge module.

The CLI maps these onto exit codes, so the split between configuration,
data and runtime problems matters.
"""


class GhostForgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GhostForgeError, ValueError):
    """Invalid or inconsistent configuration."""


class ShapeError(GhostForgeError, ValueError):
    """Tensor or image extents do not satisfy an operation's contract."""


class ContractError(GhostForgeError, ValueError):
    """A precondition of an operation was violated."""


class DataError(GhostForgeError):
    """Input data is unusable (bad files, empty corpora, ...)."""


class DegenerateMeasurementError(DataError):
    """A bucket measurement cannot be used, e.g. a zero reference intensity."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (pattern {index})")
        self.index = index


class LoadError(DataError):
    """A persisted file is corrupt, truncated or inconsistent."""


class StaleCacheError(LoadError):
    """A cached dataset no longer matches its manifest."""


class TrainingError(GhostForgeError, RuntimeError):
    """Numerical failure during optimisation."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} at step {step}")
        self.step = step
