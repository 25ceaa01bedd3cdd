"""Noisy-label correction via ensemble graph propagation and voting."""

from .core import (
    CorrectionReport,
    FeatureMatrix,
    FormatError,
    GraphmendError,
    LabelState,
    SolverError,
    TrainingError,
    ValidationError,
    load_features,
    load_label_columns,
    load_labels,
    load_report,
    save_features,
    save_labels,
    save_report,
)
from .pipeline import PipelineConfig, evaluate, run_correction, run_sweep
from .splitter import SplitConfig, split_dataset
from .synth import SynthConfig, make_blobs, make_noisy_dataset

__version__ = "0.1.0"

__all__ = [
    "CorrectionReport",
    "FeatureMatrix",
    "FormatError",
    "GraphmendError",
    "LabelState",
    "PipelineConfig",
    "SolverError",
    "SplitConfig",
    "SynthConfig",
    "TrainingError",
    "ValidationError",
    "evaluate",
    "load_features",
    "load_label_columns",
    "load_labels",
    "load_report",
    "make_blobs",
    "make_noisy_dataset",
    "run_correction",
    "run_sweep",
    "save_features",
    "save_labels",
    "save_report",
    "split_dataset",
    "__version__",
]
