"""From-scratch numpy network layers, models and training."""
from .model import Model, TrainConfig, build_cnn_gru, build_gru_only, classify, predict
from .train import Adam, TrainingError, train

__all__ = ["Model", "TrainConfig", "build_cnn_gru", "build_gru_only", "classify", "predict",
           "Adam", "TrainingError", "train"]
