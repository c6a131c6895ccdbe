"""Synthetic variable-length sequence classification.

Each class owns a smooth random template of shape ``[C, template_length]``.
A sample is Gaussian noise of random length with its class template added at
a random offset. Confusable pairs share one template and differ only in a
short suffix, which gives the task graded inter-class similarity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class SynthDatasetSpec:
    num_classes: int = 20
    channels: int = 32
    min_length: int = 18
    max_length: int = 29
    train_per_class: int = 250
    val_per_class: int = 50
    test_per_class: int = 50
    noise: float = 1.0
    confusable_fraction: float = 0.5
    template_length: int = 12
    suffix_length: int = 3
    suffix_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if not 0.0 <= self.confusable_fraction <= 1.0:
            raise ConfigError("confusable_fraction must lie in [0, 1]")
        if self.template_length > self.min_length:
            raise ConfigError("min_length must cover the template")
        if not 1 <= self.min_length <= self.max_length:
            raise ConfigError("need 1 <= min_length <= max_length")
        if not 0 < self.suffix_length <= self.template_length:
            raise ConfigError("suffix_length must lie in (0, template_length]")
        if self.noise < 0 or self.channels < 1:
            raise ConfigError("noise must be >= 0 and channels positive")

    @property
    def num_pairs(self) -> int:
        return int(self.confusable_fraction * self.num_classes) // 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Split:
    x: np.ndarray          # [N, C, max_length], zero beyond each length
    y: np.ndarray          # [N]
    lengths: np.ndarray    # [N]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Split":
        return Split(self.x[idx], self.y[idx], self.lengths[idx])


@dataclass
class SynthDataset:
    spec: SynthDatasetSpec
    templates: np.ndarray  # [K, C, template_length]
    pairs: list[tuple[int, int]]
    train: Split
    val: Split
    test: Split

    def split(self, name: str) -> Split:
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)


def _smooth(rng: np.random.Generator, channels: int, length: int) -> np.ndarray:
    kernel = np.hanning(7)[1:-1]
    raw = rng.standard_normal((channels, length + len(kernel) - 1))
    out = np.stack([np.convolve(row, kernel, mode="valid") for row in raw])
    return out / np.sqrt((out ** 2).mean())


def make_templates(spec: SynthDatasetSpec, rng: np.random.Generator) -> tuple[np.ndarray, list[tuple[int, int]]]:
    K, L, S = spec.num_classes, spec.template_length, spec.suffix_length
    templates = np.stack([_smooth(rng, spec.channels, L) for _ in range(K)])
    pairs = [(2 * i, 2 * i + 1) for i in range(spec.num_pairs)]
    for a, b in pairs:
        templates[b] = templates[a]
        templates[b, :, L - S:] += spec.suffix_scale * _smooth(rng, spec.channels, S)
    return templates, pairs


def make_synth_dataset(spec: SynthDatasetSpec) -> SynthDataset:
    """Deterministic train/val/test splits drawn from one pool of disjoint samples."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    templates, pairs = make_templates(spec, rng)
    K, C, Tmax, L = spec.num_classes, spec.channels, spec.max_length, spec.template_length
    per_class = spec.train_per_class + spec.val_per_class + spec.test_per_class
    N = K * per_class
    y = np.repeat(np.arange(K), per_class)
    lengths = rng.integers(spec.min_length, spec.max_length + 1, size=N)
    offsets = rng.integers(0, lengths - L + 1)
    x = np.zeros((N, C, Tmax))
    noise = rng.standard_normal((N, C, Tmax)) * spec.noise
    for i in range(N):
        n = lengths[i]
        x[i, :, :n] = noise[i, :, :n]
        x[i, :, offsets[i]:offsets[i] + L] += templates[y[i]]
    x = x.astype(np.float32)

    # within each class: first train, then val, then test; shuffle split order
    cuts = np.cumsum([spec.train_per_class, spec.val_per_class])
    parts: list[list[int]] = [[], [], []]
    for c in range(K):
        idx = np.arange(c * per_class, (c + 1) * per_class)
        for j, chunk in enumerate(np.split(idx, cuts)):
            parts[j].extend(chunk.tolist())
    splits = []
    for part in parts:
        part = np.asarray(part, dtype=np.int64)
        part = part[rng.permutation(len(part))]
        splits.append(Split(x[part], y[part], lengths[part].astype(np.int64)))
    return SynthDataset(spec, templates, pairs, *splits)
