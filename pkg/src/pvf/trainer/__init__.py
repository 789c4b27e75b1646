from .train import DEFAULTS, TrainConfig, TrainingDiverged, TrainResult, accuracy, backward, loss_and_grads, train

__all__ = ["DEFAULTS", "TrainConfig", "TrainingDiverged", "TrainResult", "accuracy", "backward",
           "loss_and_grads", "train"]
