"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes (see cli.py), so new failure modes
should subclass one of the three leaf categories rather than raising
bare exceptions.
"""


class LoopguardError(Exception):
    """Base class for all toolkit errors."""


class EmbeddingFormatError(LoopguardError):
    """Raised for malformed, truncated or invalid embedding files."""


class ConfigError(LoopguardError):
    """Raised for malformed or invalid run configuration."""


class PrerequisiteError(LoopguardError):
    """Raised when a pipeline stage is missing an upstream artifact."""


class NumericError(LoopguardError):
    """Raised on numeric failure (divergence, non-finite values)."""


class TrainingDiverged(NumericError):
    """Training loss became non-finite; carries the history up to the abort."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
