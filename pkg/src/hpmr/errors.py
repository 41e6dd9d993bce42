"""Exception types shared across the package."""


class HPMRError(Exception):
    """Base class for all package errors."""


class ConfigError(HPMRError, ValueError):
    """Invalid configuration value (rates, variants, sizes)."""


class ShapeError(HPMRError, ValueError):
    """Array or tensor dimensions do not agree."""


class InvalidInputError(HPMRError, ValueError):
    """Input contains non-finite values or an unsupported layout."""


class CheckpointError(HPMRError):
    """Checkpoint file is corrupt, truncated or from an incompatible version."""


class TrainingError(HPMRError, RuntimeError):
    """Training produced a non-finite loss."""
