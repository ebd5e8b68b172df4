"""Honest subsampled random forests with infinitesimal-jackknife intervals."""

__version__ = "0.1.0"

from .core import (ConfigError, DataError, Dataset, ForestConfig, Mode, PredictionResult,
                   Sample, beta_min, load_config, load_dataset, save_config, save_dataset,
                   validate_config)
from .forest import Forest, TrainingError, load_forest, predict, predict_batch, save_forest, train
from .inference import (confidence_interval, enumerate_exact_forest, predict_with_ci,
                        variance_ij, variance_ij_batch, variance_simple)

__all__ = [
    "ConfigError", "DataError", "Dataset", "Forest", "ForestConfig", "Mode",
    "PredictionResult", "Sample", "TrainingError", "beta_min", "confidence_interval",
    "enumerate_exact_forest", "load_config", "load_dataset", "load_forest", "predict",
    "predict_batch", "predict_with_ci", "save_config", "save_dataset", "save_forest",
    "train", "validate_config", "variance_ij", "variance_ij_batch", "variance_simple",
]
