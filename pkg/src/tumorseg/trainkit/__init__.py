"""Desk-scale training machinery: losses, optimizer, data, finetune plans, demo."""

from .data import FoldSplit, TumorSpec, kfold_split, synth_case, synth_dataset
from .demo import FoldResult, train_demo
from .finetune import finetune_plan
from .losses import LossConfig, batch_dice_loss, dice_focal_loss, ds_combined_loss, focal_loss
from .micro import MicroConfig, MicroPredictor, build_micro, micro_backward, micro_forward
from .optim import SFAdamWState, sfadamw_init, sfadamw_step

__all__ = [
    "FoldResult",
    "FoldSplit",
    "LossConfig",
    "MicroConfig",
    "MicroPredictor",
    "SFAdamWState",
    "TumorSpec",
    "batch_dice_loss",
    "build_micro",
    "dice_focal_loss",
    "ds_combined_loss",
    "finetune_plan",
    "focal_loss",
    "kfold_split",
    "micro_backward",
    "micro_forward",
    "sfadamw_init",
    "sfadamw_step",
    "synth_case",
    "synth_dataset",
    "train_demo",
]
