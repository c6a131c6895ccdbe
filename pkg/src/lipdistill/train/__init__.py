from .augment import MixedBatch, mixup_batch, variable_length_crop
from .data import Split, SynthDataset, SynthDatasetSpec, make_synth_dataset
from .loop import EpochRecord, TrainConfig, ce_loss, evaluate, mixup_cross_entropy, predict, train
from .optim import AdamWState, adamw_step, cosine_lr

__all__ = [
    "MixedBatch", "mixup_batch", "variable_length_crop", "Split", "SynthDataset",
    "SynthDatasetSpec", "make_synth_dataset", "EpochRecord", "TrainConfig", "ce_loss",
    "evaluate", "mixup_cross_entropy", "predict", "train", "AdamWState", "adamw_step", "cosine_lr",
]
