"""Single-view RGB-D estimation of a manipulated container's empty mass.

The pipeline: detection files + recordings -> K-nearest candidate patches
by average mask distance -> a small from-scratch CNN regressor over
(patch, [a, b, d]) -> per-recording mass estimate and exp(-relative-error)
scoring.
"""

__version__ = "0.1.0"

from .data import (
    Candidate,
    DataError,
    DetectionRecord,
    MassPrediction,
    NormStats,
    RecordingBundle,
)
from .model import MassModel, expected_param_count, load_model, save_model
from .selection import SelectionConfig, extract_candidates
from .training import TrainConfig, build_dataset, fit_stats, train

__all__ = [
    "Candidate",
    "DataError",
    "DetectionRecord",
    "MassPrediction",
    "NormStats",
    "RecordingBundle",
    "MassModel",
    "expected_param_count",
    "load_model",
    "save_model",
    "SelectionConfig",
    "extract_candidates",
    "TrainConfig",
    "build_dataset",
    "fit_stats",
    "train",
]
