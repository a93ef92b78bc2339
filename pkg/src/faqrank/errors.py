"""Exception hierarchy shared across the package."""


class FaqrankError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FaqrankError):
    """Tensor dimensions do not line up."""


class ContractError(FaqrankError):
    """A caller violated an operation's precondition."""


class ConfigError(FaqrankError):
    """An invalid configuration value."""


class DataError(FaqrankError):
    """Malformed or insufficient input data."""


class NonFiniteError(FaqrankError):
    """A kernel produced NaN or Inf."""


class CheckpointError(FaqrankError):
    """Base class for checkpoint load/save failures."""


class CheckpointCorruptError(CheckpointError):
    """File is truncated or not a checkpoint at all."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class FingerprintMismatchError(CheckpointError):
    """Checkpoint belongs to a different vocabulary or configuration."""


class StaleIndexError(FaqrankError):
    """Answer index was built from a different checkpoint."""


class TrainingDivergedError(FaqrankError):
    """Loss went non-finite; carries a diagnostic state dump."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
