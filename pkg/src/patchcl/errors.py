"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(Exception):
    """Problem with input data, files, or derived artifacts."""


class ManifestError(DataError):
    """Malformed manifest file or violated manifest invariant."""


class ExtractionError(DataError):
    """Patch extraction cannot satisfy its preconditions."""


class BatchError(DataError):
    """Batch assembly received inconsistent groups."""


class AugmentError(DataError):
    """Augmentation could not produce a valid view."""


class CheckpointError(DataError):
    """Checkpoint file is unreadable or has an unknown format."""


class NumericError(Exception):
    """Numerical precondition violated or non-finite values encountered."""
