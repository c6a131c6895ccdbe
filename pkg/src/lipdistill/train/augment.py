"""Temporal augmentations: variable-length cropping and mixup."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import DomainError


def variable_length_crop(x: np.ndarray, min_length: int, rng: np.random.Generator,
                         length: int | None = None) -> tuple[np.ndarray, int]:
    """Contiguous crop of ``x`` [C, T] (valid prefix ``length``).

    The crop length is uniform on ``[min_length, length]`` and the offset
    uniform over the positions that keep the crop inside the valid frames.
    """
    n = x.shape[-1] if length is None else int(length)
    if n < min_length:
        raise DomainError(f"sequence of length {n} is shorter than the minimum crop {min_length}")
    L = int(rng.integers(min_length, n + 1))
    off = int(rng.integers(0, n - L + 1))
    return x[:, off:off + L], L


class MixedBatch(NamedTuple):
    x: np.ndarray
    lengths: np.ndarray
    y_a: np.ndarray
    y_b: np.ndarray
    lam: float


def mixup_batch(x: np.ndarray, y: np.ndarray, alpha: float, rng: np.random.Generator,
                lengths: np.ndarray | None = None, lam: float | None = None) -> MixedBatch:
    """Convex combination of the batch with a random permutation of itself.

    ``lam`` ~ Beta(alpha, alpha) unless given. A mixed sample is valid up to
    the longer of its two sources' lengths (frames past a source's own length
    are its zero padding).
    """
    if alpha <= 0 and lam is None:
        raise DomainError("mixup alpha must be positive")
    B = x.shape[0]
    if lengths is None:
        lengths = np.full(B, x.shape[-1], dtype=np.int64)
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(B)
    if lam == 1.0:
        return MixedBatch(x, lengths, y, y[perm], 1.0)
    mixed = (lam * x + (1.0 - lam) * x[perm]).astype(x.dtype, copy=False)
    return MixedBatch(mixed, np.maximum(lengths, lengths[perm]), y, y[perm], lam)
