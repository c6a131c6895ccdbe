"""The training loop: shuffle, crop, mixup, forward, loss, backward, AdamW."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Protocol

import numpy as np

from ..errors import ConfigError, NumericalError
from ..heads import HeadConfig, TemporalHead
from ..tensor import Tensor, cross_entropy
from .augment import MixedBatch, mixup_batch, variable_length_crop
from .data import Split
from .optim import AdamWState, adamw_step, cosine_lr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    initial_lr: float = 3e-4
    batch_size: int = 32
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mixup_alpha: float = 0.4
    variable_length: bool = True
    crop_min_length: int = 18
    seed: int = 0
    deterministic: bool = True
    dtype: str = "f32"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.initial_lr <= 0:
            raise ConfigError("initial_lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.mixup_alpha < 0:
            raise ConfigError("mixup_alpha must be >= 0 (0 disables mixup)")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError("dtype must be f32 or f64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train fields {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EpochRecord:
    generation: int
    epoch: int
    lr: float
    train_loss: float
    ce_term: float
    kd_term: float
    val_top1: float

    def to_dict(self) -> dict:
        return asdict(self)


class LossFn(Protocol):
    def __call__(self, logits: Tensor, batch: MixedBatch) -> tuple[Tensor, Tensor, Tensor | None]:
        """Return ``(total, ce_term, kd_term)``."""


def mixup_cross_entropy(logits: Tensor, batch: MixedBatch) -> Tensor:
    if batch.lam == 1.0:
        return cross_entropy(logits, batch.y_a)
    return batch.lam * cross_entropy(logits, batch.y_a) + (1.0 - batch.lam) * cross_entropy(logits, batch.y_b)


def ce_loss(logits: Tensor, batch: MixedBatch):
    ce = mixup_cross_entropy(logits, batch)
    return ce, ce, None


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "shuffle", "crop", "mixup", "dropout")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


def make_batch(split: Split, idx: np.ndarray, cfg: TrainConfig, rngs, dtype) -> MixedBatch:
    x, y, lengths = split.x[idx], split.y[idx], split.lengths[idx]
    if cfg.variable_length:
        crops = [variable_length_crop(x[i], min(cfg.crop_min_length, int(lengths[i])), rngs["crop"],
                                      length=int(lengths[i]))
                 for i in range(len(idx))]
        lengths = np.array([n for _, n in crops], dtype=np.int64)
        x = np.zeros((len(idx), x.shape[1], int(lengths.max())), dtype=x.dtype)
        for i, (xi, n) in enumerate(crops):
            x[i, :, :n] = xi
    else:
        x = x[:, :, : int(lengths.max())]
    x = x.astype(dtype, copy=False)
    if cfg.mixup_alpha > 0 and len(idx) > 1:
        return mixup_batch(x, y, cfg.mixup_alpha, rngs["mixup"], lengths=lengths)
    return MixedBatch(x, lengths, y, y, 1.0)


def evaluate(head: TemporalHead, split: Split, batch_size: int = 256) -> float:
    """Top-1 accuracy with no augmentation, in eval mode."""
    if len(split) == 0:
        return float("nan")
    return float((predict(head, split, batch_size).argmax(axis=1) == split.y).mean())


def predict(head: TemporalHead, split: Split, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for every sample of ``split``."""
    from ..tensor import no_grad

    out = []
    with no_grad():
        for start in range(0, len(split), batch_size):
            sl = slice(start, start + batch_size)
            x = split.x[sl]
            lengths = split.lengths[sl]
            x = x[:, :, : int(lengths.max())]
            dtype = next(iter(head.params)).data.dtype
            out.append(head(x.astype(dtype, copy=False), lengths, mode="eval").data)
    return np.concatenate(out, axis=0)


def train(head_cfg: HeadConfig, train_split: Split, cfg: TrainConfig, val_split: Split | None = None,
          loss_fn: LossFn = ce_loss, generation: int = 0,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[TemporalHead, list[EpochRecord]]:
    """Train a freshly initialised head and return it with its epoch log.

    Initialisation, shuffling, cropping, mixup and dropout each draw from their
    own stream spawned from ``cfg.seed``.
    """
    rngs = _streams(cfg.seed)
    head = TemporalHead(head_cfg, seed=int(rngs["init"].integers(2**63)), dtype=cfg.dtype)
    params = list(head.params.params.values())
    state = AdamWState()
    dtype = np.float32 if cfg.dtype == "f32" else np.float64
    records: list[EpochRecord] = []
    N = len(train_split)

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.initial_lr)
        order = rngs["shuffle"].permutation(N)
        tot = ce_sum = kd_sum = 0.0
        seen = 0
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = make_batch(train_split, idx, cfg, rngs, dtype)
            logits = head(batch.x, batch.lengths, mode="train", rng=rngs["dropout"])
            loss, ce, kd = loss_fn(logits, batch)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss {value} at generation {generation}, epoch {epoch}, batch {start // cfg.batch_size}"
                )
            head.params.zero_grad()
            loss.backward()
            adamw_step([p.data for p in params], [p.grad for p in params], state, lr,
                       cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
            n = len(idx)
            seen += n
            tot += value * n
            ce_sum += ce.item() * n
            kd_sum += (kd.item() if kd is not None else 0.0) * n
        val = evaluate(head, val_split) if val_split is not None else float("nan")
        rec = EpochRecord(generation, epoch, lr, tot / seen, ce_sum / seen, kd_sum / seen, val)
        records.append(rec)
        log.info("gen %d epoch %d lr %.2e loss %.4f val %.4f", generation, epoch, lr, rec.train_loss, val)
        if on_epoch is not None:
            on_epoch(rec)
    head.params.zero_grad()
    return head, records
