"""Volume-preserving ReDimNet speaker embeddings on a small numpy autograd core."""
from .errors import (ConfigError, FormatError, InputError, NumericError, ReDimNetError, StateError, UsageError)
from .features import FeatureConfig, extract_features, read_wav, write_wav
from .losses import ClassifierHead, LossConfig, margin_schedule
from .metrics import ScoreSet, asnorm, eer, min_dcf
from .model import ModelConfig, ReDimNet, StageConfig, analytic_params, build, count_macs, stage_shapes

__version__ = "0.1.0"

__all__ = [
    "ClassifierHead", "ConfigError", "FeatureConfig", "FormatError", "InputError", "LossConfig", "ModelConfig",
    "NumericError", "ReDimNet", "ReDimNetError", "ScoreSet", "StageConfig", "StateError", "UsageError",
    "analytic_params", "asnorm", "build", "count_macs", "eer", "extract_features", "margin_schedule", "min_dcf",
    "read_wav", "stage_shapes", "write_wav",
]
