"""Exception hierarchy shared across the toolkit."""


class SrqaError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(SrqaError):
    """Malformed or invariant-violating manifest content."""


class DataError(SrqaError):
    """Bad or missing input data (images, directories, score files)."""


class SamplerStarvation(SrqaError):
    """A (method_id, scale) group has no eligible positive partner."""


class CheckpointError(SrqaError):
    """Incompatible, corrupt or mismatched checkpoint."""


class NumericError(SrqaError):
    """Non-finite values or failed numerical solves."""


class ConfigError(SrqaError):
    """Unknown keys or invalid values in a run configuration."""
