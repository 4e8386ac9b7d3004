"""Classifier training on mixed streams and evaluation metrics."""

from .classifier import (ClassifierInterface, MLPClassifier, TrainConfig, TrainHistory, soft_cross_entropy,
                         train_classifier)
from .metrics import (GroupSpec, MetricsReport, evaluate_accuracy, fid, group_accuracy, predictions,
                      shot_band_accuracy)

__all__ = [
    "ClassifierInterface", "GroupSpec", "MLPClassifier", "MetricsReport", "TrainConfig", "TrainHistory",
    "evaluate_accuracy", "fid", "group_accuracy", "predictions", "shot_band_accuracy", "soft_cross_entropy",
    "train_classifier",
]
