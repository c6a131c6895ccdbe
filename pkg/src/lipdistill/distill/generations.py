"""Born-again generations, sequential teacher chains and ensembling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from ..errors import ConfigError, DimensionError
from ..heads import HeadConfig, TemporalHead
from ..tensor import no_grad
from ..train.data import Split, SynthDataset
from ..train.loop import EpochRecord, TrainConfig, ce_loss, evaluate, train
from .loss import KDConfig, make_kd_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationRecord:
    """One trained model in a chain. ``teacher`` is the index of its teacher, if any."""

    index: int
    student_cfg: HeadConfig
    teacher: int | str | None
    val_top1: float
    test_top1: float
    seed: int
    epochs: int
    log: tuple[EpochRecord, ...] = ()
    checkpoint: str | None = None
    model: TemporalHead | None = field(default=None, repr=False, compare=False)

    def summary(self) -> dict:
        return {
            "index": self.index,
            "head": self.student_cfg.to_dict(),
            "teacher": self.teacher,
            "val_top1": self.val_top1,
            "test_top1": self.test_top1,
            "seed": self.seed,
            "epochs": self.epochs,
            "checkpoint": self.checkpoint,
        }


TeacherSource = Union[None, str, Path, HeadConfig, TemporalHead]


@dataclass(frozen=True)
class DistillSchedule:
    """A teacher followed by students, each student teaching the next.

    ``teacher`` may be a checkpoint path, a ready model, or a head config that
    is first trained with cross-entropy (and then appears as record 0).
    """

    teacher: TeacherSource
    students: tuple[HeadConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "students", tuple(self.students))
        if not self.students:
            raise ConfigError("a distillation schedule needs at least one student")
        if self.teacher is None:
            raise ConfigError("a distillation schedule needs a teacher")


Trainer = Callable[..., GenerationRecord]


def train_generation(teacher: TemporalHead | None, student_cfg: HeadConfig, dataset: SynthDataset,
                     train_cfg: TrainConfig, kd_cfg: KDConfig, seed: int, index: int = 0,
                     teacher_ref: int | str | None = None,
                     on_epoch: Callable[[EpochRecord], None] | None = None) -> GenerationRecord:
    """Train one student; pure cross-entropy when ``teacher`` is None."""
    if teacher is not None and teacher.cfg.num_classes != student_cfg.num_classes:
        raise DimensionError(
            f"teacher predicts {teacher.cfg.num_classes} classes, student {student_cfg.num_classes}")
    cfg = replace(train_cfg, seed=seed)
    loss_fn = ce_loss if teacher is None else make_kd_loss(teacher, kd_cfg)
    head, records = train(student_cfg, dataset.train, cfg, dataset.val, loss_fn=loss_fn,
                          generation=index, on_epoch=on_epoch)
    val = records[-1].val_top1 if records else evaluate(head, dataset.val)
    rec = GenerationRecord(
        index=index, student_cfg=student_cfg,
        teacher=None if teacher is None else (index - 1 if teacher_ref is None else teacher_ref),
        val_top1=val, test_top1=evaluate(head, dataset.test), seed=seed, epochs=cfg.epochs,
        log=tuple(records), model=head,
    )
    log.info("generation %d: val %.4f test %.4f", index, rec.val_top1, rec.test_top1)
    return rec


def born_again(base_cfg: HeadConfig, dataset: SynthDataset, train_cfg: TrainConfig, kd_cfg: KDConfig,
               max_generations: int = 5, patience: int = 1, trainer: Trainer = train_generation,
               on_epoch: Callable[[EpochRecord], None] | None = None,
               on_record: Callable[[GenerationRecord], None] | None = None) -> list[GenerationRecord]:
    """Self-distillation: generation ``g`` is taught by generation ``g - 1``.

    Generation ``g`` is trained with seed ``train_cfg.seed + g``. The chain
    stops after ``max_generations`` models, or once ``patience`` consecutive
    generations fail to beat the best validation top-1 so far (strictly).
    The non-improving generations stay in the returned list.
    """
    if max_generations < 1:
        raise ConfigError("max_generations must be >= 1")
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    chain: list[GenerationRecord] = []
    best = -np.inf
    stale = 0
    for g in range(max_generations):
        teacher = chain[-1].model if chain else None
        rec = trainer(teacher, base_cfg, dataset, train_cfg, kd_cfg, train_cfg.seed + g, index=g,
                      on_epoch=on_epoch)
        chain.append(rec)
        if on_record is not None:
            on_record(rec)
        if rec.val_top1 > best:
            best, stale = rec.val_top1, 0
        else:
            stale += 1
            if stale >= patience:
                break
    return chain


def _resolve_teacher(source: TeacherSource) -> TemporalHead | None:
    if isinstance(source, TemporalHead):
        return source
    if isinstance(source, (str, Path)):
        return TemporalHead.load(source)
    return None


def run_schedule(schedule: DistillSchedule, dataset: SynthDataset, train_cfg: TrainConfig, kd_cfg: KDConfig,
                 trainer: Trainer = train_generation,
                 on_epoch: Callable[[EpochRecord], None] | None = None,
                 on_record: Callable[[GenerationRecord], None] | None = None) -> list[GenerationRecord]:
    """Every record produced by a schedule, in training order.

    A teacher given as a config is trained first and recorded at index 0.
    Student ``i`` then uses seed ``train_cfg.seed + index``.
    """
    records: list[GenerationRecord] = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    teacher = _resolve_teacher(schedule.teacher)
    ref: int | str | None
    if teacher is None:
        emit(trainer(None, schedule.teacher, dataset, train_cfg, kd_cfg, train_cfg.seed, index=0,
                     on_epoch=on_epoch))
        teacher, ref = records[-1].model, 0
    else:
        ref = str(schedule.teacher) if isinstance(schedule.teacher, (str, Path)) else "given"
    start = len(records)
    for i, student_cfg in enumerate(schedule.students):
        idx = start + i
        rec = trainer(teacher, student_cfg, dataset, train_cfg, kd_cfg, train_cfg.seed + idx, index=idx,
                      teacher_ref=ref, on_epoch=on_epoch)
        emit(rec)
        teacher, ref = rec.model, idx
    return records


def sequential_distill(schedule: DistillSchedule, dataset: SynthDataset, train_cfg: TrainConfig,
                       kd_cfg: KDConfig, trainer: Trainer = train_generation) -> GenerationRecord:
    """Run the chain and return the final student."""
    return run_schedule(schedule, dataset, train_cfg, kd_cfg, trainer)[-1]


def ensemble_predict(models: Sequence[TemporalHead], x, lengths=None, average: str = "probs") -> np.ndarray:
    """Class probabilities ``[B, K]`` combined over ``models``.

    ``average="probs"`` takes the mean of per-model softmax outputs;
    ``average="logits"`` applies softmax to the mean logits.
    """
    if not models:
        raise ConfigError("ensemble_predict needs at least one model")
    if average not in ("probs", "logits"):
        raise ConfigError(f"average must be 'probs' or 'logits', got {average!r}")
    K = {m.cfg.num_classes for m in models}
    if len(K) != 1:
        raise DimensionError(f"ensemble members disagree on the class count: {sorted(K)}")
    acc = None
    with no_grad():
        for m in models:
            dtype = next(iter(m.params)).data.dtype
            z = m(np.asarray(x, dtype=dtype), lengths, mode="eval").data.astype(np.float64)
            term = z if average == "logits" else _softmax(z)
            acc = term if acc is None else acc + term
    mean = acc / len(models)
    return _softmax(mean) if average == "logits" else mean


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ensemble_top1(models: Sequence[TemporalHead], split: Split, average: str = "probs",
                  batch_size: int = 256) -> float:
    """Top-1 accuracy of :func:`ensemble_predict` on ``split``."""
    hits = 0
    for start in range(0, len(split), batch_size):
        part = split.subset(slice(start, start + batch_size))
        T = int(part.lengths.max())
        probs = ensemble_predict(models, part.x[:, :, :T], part.lengths, average)
        hits += int((probs.argmax(axis=1) == part.y).sum())
    return hits / len(split) if len(split) else float("nan")
