"""Exception types shared across the package."""


class AirGroundError(Exception):
    """Base class for all package errors."""


class ConfigError(AirGroundError, ValueError):
    """Invalid configuration value, unknown key or bad range."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class NumericInputError(AirGroundError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class StepError(AirGroundError, ValueError):
    """Bad integration step (dt out of range, invalid state)."""


class ActionError(AirGroundError, ValueError):
    """Unknown or malformed action."""


class LifecycleError(AirGroundError, RuntimeError):
    """Operation called in the wrong lifecycle phase."""


class BatchError(AirGroundError, ValueError):
    """Batched input does not match the pool size."""


class ShapeError(AirGroundError, ValueError):
    """Array shapes do not agree."""


class TapeError(AirGroundError, RuntimeError):
    """Backward pass requested without a recorded forward pass."""


class CheckpointError(AirGroundError, RuntimeError):
    """Checkpoint could not be written or read back faithfully."""


class UsageError(AirGroundError, ValueError):
    """Caller misuse of an evaluation or export helper."""
