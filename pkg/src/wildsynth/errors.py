"""Exception hierarchy. Every error raised on purpose derives from WildsynthError."""


class WildsynthError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(WildsynthError):
    """Invalid configuration or dimension mismatch at construction/call time."""


class InputError(WildsynthError):
    """A runtime input violates a documented precondition (e.g. unnormalized direction)."""


class UsageError(WildsynthError):
    """API misuse, e.g. backward without a recorded forward pass."""


class DataError(WildsynthError):
    """Dataset or file content is missing, malformed, or inconsistent."""


class FormatError(DataError):
    """A binary/text file does not match its declared format (bad magic, bad header)."""


class UnsupportedModelError(DataError):
    """COLMAP camera model that this importer does not handle."""


class TrainingError(WildsynthError):
    """Non-finite loss/gradients or another unrecoverable optimization failure."""


class CheckpointError(WildsynthError):
    """Checkpoint file is corrupt, truncated, or incompatible."""


class OracleError(WildsynthError):
    """A test oracle's own preconditions failed (e.g. non-deterministic closure)."""
