"""Confidence-guided multi-path inference for CTR scorers."""

from .core import (MASK, ComboKey, ConfigError, Dataset, FeatureValue, Instance, InvalidInputError,
                   MattError, SchemaError, canonical_combo, enumerate_combos)
from .data import Schema, SynthConfig, bucketize_numeric, generate_synthetic, load_dataset
from .pathgen import (MattParams, aggregate, generate_path, mask_instance, matt_predict, path_weight,
                      predict_many, step_probabilities)
from .scorer import FmModel, TrainConfig, auc, fm_score, logloss, train
from .sketch import ConfidenceSketch, SketchConfig, build_sketch, chebyshev_lower_bound

__all__ = [
    "MASK", "ComboKey", "ConfigError", "Dataset", "FeatureValue", "Instance", "InvalidInputError",
    "MattError", "SchemaError", "canonical_combo", "enumerate_combos",
    "Schema", "SynthConfig", "bucketize_numeric", "generate_synthetic", "load_dataset",
    "MattParams", "aggregate", "generate_path", "mask_instance", "matt_predict", "path_weight",
    "predict_many", "step_probabilities",
    "FmModel", "TrainConfig", "auc", "fm_score", "logloss", "train",
    "ConfidenceSketch", "SketchConfig", "build_sketch", "chebyshev_lower_bound",
]
