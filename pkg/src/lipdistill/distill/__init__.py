from .generations import (
    DistillSchedule,
    GenerationRecord,
    born_again,
    ensemble_predict,
    ensemble_top1,
    run_schedule,
    sequential_distill,
    train_generation,
)
from .loss import DIRECTIONS, KDConfig, kd_loss, kd_term, make_kd_loss

__all__ = [
    "DistillSchedule", "GenerationRecord", "born_again", "ensemble_predict", "ensemble_top1",
    "run_schedule", "sequential_distill", "train_generation", "DIRECTIONS", "KDConfig",
    "kd_loss", "kd_term", "make_kd_loss",
]
