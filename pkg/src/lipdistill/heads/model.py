"""Trainable TCN / MS-TCN heads over ``[B, C, T]`` feature sequences.

Block layout (repeated ``num_blocks`` times, dilation ``dilation_base**i``)::

    for stage in (0, 1):
        per branch k:  conv_k -> batchnorm -> PReLU        (same padding)
        concat branches -> dropout
    residual: identity or 1x1 projection (with bias)
    PReLU(stage output + residual)

then masked mean over valid frames and a bias-free linear classifier. In the depthwise
separable variant ``conv_k`` becomes depthwise conv (no bias) -> batchnorm ->
PReLU -> pointwise conv (no bias); the pointwise conv is followed by the same
batchnorm -> PReLU as the standard conv.

Frames at or beyond ``lengths[b]`` are zeroed before every temporal conv, so
they never reach the valid outputs. In eval mode each sample is additionally
run on its own valid prefix, which makes logits bit-identical under padding
and independent of the rest of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..errors import DimensionError, DomainError
from ..tensor import (
    Tensor,
    batchnorm1d,
    concat,
    conv1d,
    dropout,
    linear,
    load_checkpoint,
    masked_mean_over_time,
    prelu,
    save_checkpoint,
    time_mask,
)
from .config import HeadConfig

PRELU_INIT = 0.25


@dataclass
class HeadParams:
    """Named trainable tensors plus batchnorm running statistics."""

    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.params.items()}
        out.update(self.buffers)
        return out

    def copy(self) -> "HeadParams":
        return HeadParams(
            {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def astype(self, dtype) -> "HeadParams":
        return HeadParams(
            {k: Tensor(t.data, requires_grad=t.requires_grad, dtype=dtype) for k, t in self.params.items()},
            {k: v.astype(np.float64) for k, v in self.buffers.items()},
        )


def _conv_units(cfg: HeadConfig):
    """Yield ``(block, stage, k, prefix, c_in)`` for every temporal conv unit."""
    for blk in range(cfg.num_blocks):
        for stage in range(2):
            cin = cfg.block_in(blk) if stage == 0 else cfg.width
            for k in cfg.kernel_sizes:
                yield blk, stage, k, f"block{blk}.conv{stage}.k{k}.", cin


def param_shapes(cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor of the head with its shape, in initialisation order."""
    wb, W = cfg.branch_width, cfg.width
    shapes: dict[str, tuple[int, ...]] = {}
    for blk, stage, k, p, cin in _conv_units(cfg):
        if cfg.depthwise_separable:
            shapes[p + "dw.weight"] = (cin, 1, k)
            shapes[p + "dw_bn.weight"] = (cin,)
            shapes[p + "dw_bn.bias"] = (cin,)
            shapes[p + "dw_act.weight"] = (cin,)
            shapes[p + "pw.weight"] = (wb, cin, 1)
        else:
            shapes[p + "conv.weight"] = (wb, cin, k)
            shapes[p + "conv.bias"] = (wb,)
        shapes[p + "bn.weight"] = (wb,)
        shapes[p + "bn.bias"] = (wb,)
        shapes[p + "act.weight"] = (wb,)
        if stage == 1 and k == cfg.kernel_sizes[-1]:
            if cfg.needs_projection(blk):
                shapes[f"block{blk}.proj.weight"] = (W, cfg.block_in(blk), 1)
                shapes[f"block{blk}.proj.bias"] = (W,)
            shapes[f"block{blk}.act.weight"] = (W,)
    shapes["fc.weight"] = (cfg.num_classes, W)  # bias-free classifier
    return shapes


def head_param_count(cfg: HeadConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def init_params(cfg: HeadConfig, seed: int, dtype: str = "f32") -> HeadParams:
    """He-normal conv weights (variance ``2 / fan_in``), ``1 / fan_in`` for the classifier.

    Biases start at 0, batchnorm at identity (weight 1, bias 0, running mean 0,
    running var 1) and PReLU slopes at 0.25. Draws come from one PCG64 stream
    in :func:`param_shapes` order, so a seed fixes every value.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("act.weight"):
            arr = np.full(shape, PRELU_INIT)
        elif name.endswith("bn.weight"):
            arr = np.ones(shape)
            base = name[: -len("weight")]
            buffers[base + "running_mean"] = np.zeros(shape)
            buffers[base + "running_var"] = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        elif name == "fc.weight":
            arr = rng.standard_normal(shape) * np.sqrt(1.0 / shape[1])
        else:
            fan_in = shape[1] * shape[2]
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[name] = Tensor(arr, requires_grad=True, dtype=dtype)
    return HeadParams(params, buffers)


def _bn(P: HeadParams, prefix: str, x: Tensor, training: bool, mask) -> Tensor:
    return batchnorm1d(x, P[prefix + "weight"], P[prefix + "bias"],
                       P.buffers[prefix + "running_mean"], P.buffers[prefix + "running_var"],
                       training=training, mask=mask)


def _unit(cfg: HeadConfig, P: HeadParams, p: str, x: Tensor, k: int, d: int,
          training: bool, mask) -> Tensor:
    pad = (k - 1) * d // 2
    if cfg.depthwise_separable:
        h = conv1d(x, P[p + "dw.weight"], None, padding=pad, dilation=d, groups=x.shape[1])
        h = _bn(P, p + "dw_bn.", h, training, mask)
        h = prelu(h, P[p + "dw_act.weight"])
        h = conv1d(h, P[p + "pw.weight"])
    else:
        h = conv1d(x, P[p + "conv.weight"], P[p + "conv.bias"], padding=pad, dilation=d)
    h = _bn(P, p + "bn.", h, training, mask)
    return prelu(h, P[p + "act.weight"])


def _forward_batch(cfg: HeadConfig, P: HeadParams, x: Tensor, lengths: np.ndarray,
                   training: bool, rng) -> Tensor:
    T = x.shape[2]
    mask = time_mask(lengths, T, x.data.dtype)
    full = bool((lengths == T).all())
    h = x
    for blk in range(cfg.num_blocks):
        d = cfg.dilation(blk)
        block_in = h
        for stage in range(2):
            xin = h if full else h * mask
            outs = [_unit(cfg, P, f"block{blk}.conv{stage}.k{k}.", xin, k, d, training,
                          None if full else mask)
                    for k in cfg.kernel_sizes]
            h = concat(outs, axis=1)
            h = dropout(h, cfg.dropout, rng, training)
        if cfg.needs_projection(blk):
            skip = conv1d(block_in, P[f"block{blk}.proj.weight"], P[f"block{blk}.proj.bias"])
        else:
            skip = block_in
        h = prelu(h + skip, P[f"block{blk}.act.weight"])
    pooled = masked_mean_over_time(h, lengths)
    return linear(pooled, P["fc.weight"])


def head_forward(cfg: HeadConfig, params: HeadParams, features, lengths=None,
                 mode: str = "eval", rng: np.random.Generator | None = None,
                 per_sample: bool = True) -> Tensor:
    """Logits ``[B, num_classes]`` for features ``[B, C, T]`` with valid ``lengths``.

    ``mode="train"`` uses batch statistics (updating the running ones) and
    dropout drawn from ``rng``; ``mode="eval"`` is deterministic. Eval runs
    each sample separately unless ``per_sample=False``, which batches the
    computation (same maths, but float rounding may then depend on the batch).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.ndim != 3:
        raise DimensionError(f"head expects features [B, C, T], got {x.shape}")
    B, C, T = x.shape
    if C != cfg.input_dim:
        raise DimensionError(f"head expects {cfg.input_dim} input channels, got {C}")
    lengths = np.full(B, T, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.shape[0] != B:
        raise DimensionError(f"got {lengths.shape[0]} lengths for a batch of {B}")
    if (lengths < 1).any() or (lengths > T).any():
        raise DomainError(f"lengths must lie in [1, {T}]")

    if mode == "train":
        return _forward_batch(cfg, params, x, lengths, True, rng)
    if not per_sample or (B == 1 and lengths[0] == T):
        return _forward_batch(cfg, params, x, lengths, False, None)
    # per-sample on the valid prefix: exact padding and batch-order invariance
    from ..tensor import functional as F
    rows = []
    for i in range(B):
        n = int(lengths[i])
        xi = _slice_sample(x, i, n)
        rows.append(_forward_batch(cfg, params, xi, np.array([n]), False, None))
    return F.concat(rows, axis=0)


def _slice_sample(x: Tensor, i: int, n: int) -> Tensor:
    from ..tensor.core import record

    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[i, :, :n] = g[0]
        return (gx,)

    return record("slice", np.ascontiguousarray(x.data[i:i + 1, :, :n]), (x,), backward)


class TemporalHead:
    """A head configuration bundled with its parameters."""

    def __init__(self, cfg: HeadConfig, params: HeadParams | None = None, seed: int = 0, dtype: str = "f32"):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed, dtype)

    def __call__(self, features, lengths=None, mode: str = "eval", rng=None, per_sample: bool = True) -> Tensor:
        return head_forward(self.cfg, self.params, features, lengths, mode, rng, per_sample)

    def num_params(self) -> int:
        return self.params.count()

    def copy(self) -> "TemporalHead":
        return TemporalHead(self.cfg, self.params.copy())

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.params.state(), {"kind": "head", "head": self.cfg.to_dict(), **(meta or {})})

    @classmethod
    def load(cls, path) -> "TemporalHead":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "head":
            raise DomainError(f"{path} does not hold a temporal head")
        cfg = HeadConfig.from_dict(meta["head"])
        names = param_shapes(cfg)
        params = {k: Tensor(tensors[k], requires_grad=True) for k in names}
        buffers = {k: v for k, v in tensors.items() if k not in names}
        return cls(cfg, HeadParams(params, buffers))
