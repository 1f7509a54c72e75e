"""Exception hierarchy shared across the package."""


class RecDiffSegError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(RecDiffSegError, ValueError):
    pass


class ShapeError(RecDiffSegError, ValueError):
    pass


class ValidationError(RecDiffSegError, ValueError):
    """Input data violates a contract (non one-hot labels, out-of-range index...)."""


class StateError(RecDiffSegError, RuntimeError):
    pass


class TrainingDivergedError(RecDiffSegError, FloatingPointError):
    pass


class IngestionError(RecDiffSegError, ValueError):
    """A file could not be mapped onto the expected schema (e.g. unknown palette color)."""


class CheckpointError(RecDiffSegError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class ManifestError(CheckpointError):
    pass


class CompatibilityError(RecDiffSegError, ValueError):
    pass
