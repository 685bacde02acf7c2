from .layers import Attention, DenseStack, attention_apply, dense_apply, softmax_cross_entropy
from .model import Availability, FusionModel, ModelDims, forward, fuse, total_loss
from .train import TrainConfig, fit, load_checkpoint, predict_proba, save_checkpoint, train_step

__all__ = [
    "Attention",
    "Availability",
    "DenseStack",
    "FusionModel",
    "ModelDims",
    "TrainConfig",
    "attention_apply",
    "dense_apply",
    "fit",
    "forward",
    "fuse",
    "load_checkpoint",
    "predict_proba",
    "save_checkpoint",
    "softmax_cross_entropy",
    "total_loss",
    "train_step",
]
