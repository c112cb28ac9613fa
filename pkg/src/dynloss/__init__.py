"""Per-class loss scheduling for imbalanced multi-class 3D segmentation."""

from .metrics import dice_score, mean_dice, per_class_dice, poorly_performing
from .scheduler import LossScheduler, SchedulerConfig, Strategy

__version__ = "0.1.0"

__all__ = [
    "LossScheduler",
    "SchedulerConfig",
    "Strategy",
    "dice_score",
    "mean_dice",
    "per_class_dice",
    "poorly_performing",
]
