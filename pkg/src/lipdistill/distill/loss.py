"""Cross-entropy plus a KL term toward a frozen teacher's output distribution."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, DimensionError
from ..tensor import Tensor, cross_entropy, kl_div_log, log_softmax, no_grad
from ..train.augment import MixedBatch
from ..train.loop import mixup_cross_entropy

DIRECTIONS = ("teacher_student", "student_teacher")


@dataclass(frozen=True)
class KDConfig:
    """``alpha`` weights the KL term; ``direction`` names the KL argument order.

    ``teacher_student`` is KL(teacher || student), the teacher distribution
    acting as the target.
    """

    alpha: float = 1.0
    temperature: float = 1.0
    direction: str = "teacher_student"

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KDConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown kd fields {sorted(unknown)}")
        return cls(**d)


def _detached(z) -> Tensor:
    data = z.data if isinstance(z, Tensor) else np.asarray(z)
    return Tensor(data.copy())


def kd_term(z_s: Tensor, z_t, cfg: KDConfig) -> Tensor:
    """The KL part alone (unweighted). ``z_t`` never receives a gradient."""
    zt = _detached(z_t)
    if zt.shape != z_s.shape or z_s.ndim != 2:
        raise DimensionError(f"student logits {z_s.shape} and teacher logits {zt.shape} must match as [B, K]")
    T = cfg.temperature
    with no_grad():
        logp_t = log_softmax(zt / T if T != 1.0 else zt)
    logp_s = log_softmax(z_s / T if T != 1.0 else z_s)
    if cfg.direction == "teacher_student":
        return kl_div_log(logp_t, logp_s)
    return kl_div_log(logp_s, logp_t)


def kd_loss(z_s: Tensor, z_t, y, cfg: KDConfig) -> Tensor:
    """``CE(y, softmax(z_s)) + alpha * KL(softmax(z_t/T) || softmax(z_s/T))``."""
    ce = cross_entropy(z_s, y)
    if cfg.alpha == 0:
        kd_term(z_s, z_t, cfg)  # still validates shapes
        return ce
    return ce + cfg.alpha * kd_term(z_s, z_t, cfg)


def make_kd_loss(teacher, cfg: KDConfig):
    """A training loss that queries ``teacher`` (eval mode) on the student's mixed batch."""

    def loss_fn(logits: Tensor, batch: MixedBatch):
        with no_grad():
            z_t = teacher(batch.x, batch.lengths, mode="eval", per_sample=False)
        ce = mixup_cross_entropy(logits, batch)
        kd = kd_term(logits, z_t, cfg)
        total = ce if cfg.alpha == 0 else ce + cfg.alpha * kd
        return total, ce, kd

    return loss_fn
