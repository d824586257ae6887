"""Diffusion-based out-of-distribution scoring over penultimate classifier features.

The pipeline: complete the classifier head so the bias folds into the feature
vector, project class-conditional features onto a common sphere, and score a
test feature by the magnitude of the closed-form stable noise (or a trained
noise predictor) at a searched input scale.  Higher score = more OOD.
"""

from nodi.errors import (
    NodiError,
    InvalidHead,
    DimensionError,
    DegenerateFeature,
    FormatError,
    LabelError,
    ScheduleError,
    StepError,
    EmptyClass,
    TrainingDiverged,
    MetricError,
)

__version__ = "0.1.0"

__all__ = [
    "NodiError",
    "InvalidHead",
    "DimensionError",
    "DegenerateFeature",
    "FormatError",
    "LabelError",
    "ScheduleError",
    "StepError",
    "EmptyClass",
    "TrainingDiverged",
    "MetricError",
    "__version__",
]
