"""Contrastive pretraining on image tiles with spatial neighbors as positives."""

from .config import (
    AblationConfig,
    AugmentPolicy,
    CorpusConfig,
    EncoderConfig,
    EvalConfig,
    EvalTransform,
    ProjectionConfig,
    RunConfig,
    TrainConfig,
    load_run_config,
)
from .errors import (
    AugmentError,
    BatchError,
    CheckpointError,
    ConfigError,
    DataError,
    ExtractionError,
    ManifestError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "AugmentPolicy",
    "CorpusConfig",
    "EncoderConfig",
    "EvalConfig",
    "EvalTransform",
    "ProjectionConfig",
    "RunConfig",
    "TrainConfig",
    "load_run_config",
    "AugmentError",
    "BatchError",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "ExtractionError",
    "ManifestError",
    "NumericError",
    "__version__",
]
