"""Syscall return-value side-channel toolkit: collection, simulation,
feature ranking, preprocessing, CNN-GRU and DTW-KNN classification."""
from .core import (
    CATALOG, WINDOW_LENGTH, BehaviorLabel, ClassificationResult, DataError, Dataset, DeviceMeta,
    FeatureId, RankingReport, RawTrace, Window, make_dataset,
)

__version__ = "0.1.0"

__all__ = ["CATALOG", "WINDOW_LENGTH", "BehaviorLabel", "ClassificationResult", "DataError", "Dataset",
           "DeviceMeta", "FeatureId", "RankingReport", "RawTrace", "Window", "make_dataset"]
