"""
Training module - Seeded detector training.
"""

from groupdet.training.trainer import Trainer, TrainResult, evaluate_model, lr_for_epoch, train

__all__ = ["Trainer", "TrainResult", "evaluate_model", "lr_for_epoch", "train"]
