"""Relation classifier, fusion variants and training."""

from .classifier import (CompoundSide, FrozenTable, FusionConfigError, FusionMLP, RelationClassifier,
                         TableSide, fuse_and_classify)
from .encoders import HFEncoder, TinyTransformerEncoder, Vocabulary, encode_text
from .training import (Prediction, TrainConfig, TrainedModel, TrainingError, bce_loss, evaluate_instances,
                       load_checkpoint, lr_schedule, predict, predict_proba, save_checkpoint, train_model)

__all__ = [
    "CompoundSide", "FrozenTable", "FusionConfigError", "FusionMLP", "RelationClassifier", "TableSide",
    "fuse_and_classify", "HFEncoder", "TinyTransformerEncoder", "Vocabulary", "encode_text",
    "Prediction", "TrainConfig", "TrainedModel", "TrainingError", "bce_loss", "evaluate_instances",
    "load_checkpoint", "lr_schedule", "predict", "predict_proba", "save_checkpoint", "train_model",
]
