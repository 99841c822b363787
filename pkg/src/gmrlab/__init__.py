"""Continual-learning laboratory around a folding + mixture + readout model.

The mixture layer estimates the input density, generates class-conditional
samples for rehearsal, and feeds normalized responsibilities to a linear
readout; an elastic-weight-consolidation baseline and a sequential-task
experiment harness round out the lab.
"""

from .datasets import LabeledDataset, Slt, build_slt, load_idx, subset_by_classes
from .errors import (
    ConfigError,
    ConsistencyError,
    ControlError,
    FormatError,
    GmrError,
    NumericError,
    ShapeError,
)
from .folding import FoldSpec, fold, fold_shape, unfold
from .harness import ExperimentConfig, run_experiment, summarize
from .model import BoundaryDetector, GmrModel, ReplayBuffer, TrainConfig, build_gmr

__all__ = [
    "BoundaryDetector",
    "ConfigError",
    "ConsistencyError",
    "ControlError",
    "ExperimentConfig",
    "FoldSpec",
    "FormatError",
    "GmrError",
    "GmrModel",
    "LabeledDataset",
    "NumericError",
    "ReplayBuffer",
    "ShapeError",
    "Slt",
    "TrainConfig",
    "build_gmr",
    "build_slt",
    "fold",
    "fold_shape",
    "load_idx",
    "run_experiment",
    "subset_by_classes",
    "summarize",
    "unfold",
]

__version__ = "0.1.0"
