"""Trainable unfolded version of the alternating solver."""

from .checkpoint import load_checkpoint, save_checkpoint
from .features import feature_bank, feature_count
from .losses import (
    combine_stage_losses,
    dice_loss,
    edge_ground_truth,
    pixel_weights,
    stage_weight,
    weighted_loss_terms,
)
from .network import ForwardResult, forward, predict, robe_stage, sofs_stage, to_batch
from .params import ParamSet, init_params
from .train import TrainConfig, TrainResult, evaluate_iou, reconstruction_mse, train

__all__ = [
    "ForwardResult", "ParamSet", "TrainConfig", "TrainResult", "combine_stage_losses",
    "dice_loss", "edge_ground_truth", "evaluate_iou", "feature_bank", "feature_count",
    "forward", "init_params", "load_checkpoint", "pixel_weights", "predict",
    "reconstruction_mse", "robe_stage", "save_checkpoint", "sofs_stage", "stage_weight",
    "to_batch", "train", "weighted_loss_terms",
]
