"""Declarative architecture IR.

A :class:`ModelSpec` is a backbone and a head, each an ordered list of
:class:`Node` objects. A node wraps a :class:`LayerSpec` and names the nodes
it reads from; an empty ``inputs`` tuple means "the previous node" (or the
model input for the very first node). Shapes exclude the batch axis and are
channel-first: video is ``[C, T, H, W]``, feature sequences ``[C, T]``.

Spatial kernels apply to the trailing axes of their input, so a ``conv2d``
on ``[C, T, H, W]`` runs per frame while a ``conv3d`` also spans time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Iterator

import yaml

from ..errors import ConfigError, LayerError

CONV_KINDS = ("conv1d", "conv2d", "conv3d", "depthwise_conv", "pointwise_conv")
KINDS = CONV_KINDS + (
    "batchnorm",
    "activation",
    "maxpool",
    "avgpool_global",
    "linear",
    "channel_shuffle",
    "channel_slice",
    "residual_add",
    "concat_branches",
    "reshape_fold_time",
    "temporal_trim",
)
_KERNEL_RANK = {"conv1d": 1, "conv2d": 2, "conv3d": 3}
ACTIVATIONS = ("relu", "prelu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, ...] = ()
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()
    dilation: tuple[int, ...] = ()
    groups: int = 1
    has_bias: bool = False
    fn: str = "relu"
    axes: int = 0
    start: int = 0
    stop: int = 0
    trim: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        n = len(self.kernel)
        # fill per-axis defaults so geometry is always explicit
        for name, default in (("stride", 1), ("padding", 0), ("dilation", 1)):
            value = getattr(self, name)
            if isinstance(value, int):
                value = (value,) * n
            value = tuple(value) if value else (default,) * n
            object.__setattr__(self, name, value)
        object.__setattr__(self, "kernel", tuple(self.kernel))
        self.validate()

    def validate(self) -> None:
        k = self.kind
        if k in CONV_KINDS or k == "maxpool":
            if not self.kernel:
                raise ConfigError(f"{k} needs a kernel")
            if k in _KERNEL_RANK and len(self.kernel) != _KERNEL_RANK[k]:
                raise ConfigError(f"{k} needs a {_KERNEL_RANK[k]}-d kernel, got {self.kernel}")
            if not (len(self.stride) == len(self.padding) == len(self.dilation) == len(self.kernel)):
                raise ConfigError(f"{k}: kernel/stride/padding/dilation ranks differ")
            if any(v < 1 for v in self.kernel + self.stride + self.dilation) or any(p < 0 for p in self.padding):
                raise ConfigError(f"{k}: geometry fields must be positive")
        if k in CONV_KINDS:
            if self.in_channels < 1 or self.out_channels < 1:
                raise ConfigError(f"{k}: channels must be positive")
            if self.groups < 1 or self.in_channels % self.groups or self.out_channels % self.groups:
                raise ConfigError(f"{k}: channels ({self.in_channels}, {self.out_channels}) not divisible by groups {self.groups}")
            if k == "depthwise_conv" and self.groups != self.in_channels:
                raise ConfigError("depthwise_conv requires groups == in_channels")
            if k == "pointwise_conv" and any(v != 1 for v in self.kernel):
                raise ConfigError("pointwise_conv requires a kernel of ones")
        if k in ("batchnorm", "channel_shuffle") and self.in_channels < 1:
            raise ConfigError(f"{k}: channels must be positive")
        if k == "channel_shuffle" and (self.groups < 1 or self.in_channels % self.groups):
            raise ConfigError(f"channel_shuffle: groups {self.groups} must divide {self.in_channels}")
        if k == "activation":
            if self.fn not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {self.fn!r}")
            if self.fn == "prelu" and self.in_channels < 1:
                raise ConfigError("prelu needs in_channels for its per-channel slopes")
        if k == "linear" and (self.in_channels < 1 or self.out_channels < 1):
            raise ConfigError("linear: features must be positive")
        if k == "avgpool_global" and self.axes < 1:
            raise ConfigError("avgpool_global: axes must be >= 1")
        if k == "temporal_trim" and self.trim < 0:
            raise ConfigError("temporal_trim: trim must be >= 0")
        if k == "channel_slice" and not 0 <= self.start < self.stop:
            raise ConfigError("channel_slice: need 0 <= start < stop")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        defaults = LayerSpec.__dataclass_fields__
        for key, value in asdict(self).items():
            if key == "kind":
                continue
            if isinstance(value, tuple):
                value = list(value)
                if not value:
                    continue
            elif value == defaults[key].default:
                continue
            d[key] = value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown layer fields {sorted(unknown)}")
        for key in ("kernel", "stride", "padding", "dilation"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Node:
    name: str
    layer: LayerSpec
    inputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class ModelSpec:
    name: str
    backbone: tuple[Node, ...] = ()
    head: tuple[Node, ...] = ()
    width_multiplier: float = 1.0
    head_width_multiplier: float = 1.0
    num_classes: int = 0
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def nodes(self) -> Iterator[Node]:
        yield from self.backbone
        yield from self.head

    def resolved(self) -> list[tuple[Node, tuple[str, ...]]]:
        """Nodes with their default inputs filled in, checked to form a DAG."""
        seen = {"input"}
        prev = "input"
        out = []
        for node in self.nodes():
            if node.name in seen:
                raise ConfigError(f"duplicate node name {node.name!r}")
            inputs = node.inputs or (prev,)
            for src in inputs:
                if src not in seen:
                    raise ConfigError(f"node {node.name!r} reads {src!r} before it is defined")
            out.append((node, inputs))
            seen.add(node.name)
            prev = node.name
        if not out:
            raise ConfigError(f"model {self.name!r} has no layers")
        return out

    def with_name(self, name: str) -> "ModelSpec":
        return replace(self, name=name)

    # -- structured text round trip --------------------------------------
    def to_dict(self) -> dict:
        def dump(nodes: Iterable[Node]):
            out = []
            for n in nodes:
                d = {"name": n.name, **n.layer.to_dict()}
                if n.inputs:
                    d["inputs"] = list(n.inputs)
                out.append(d)
            return out

        d = {
            "name": self.name,
            "width_multiplier": self.width_multiplier,
            "head_width_multiplier": self.head_width_multiplier,
            "num_classes": self.num_classes,
            "backbone": dump(self.backbone),
            "head": dump(self.head),
        }
        if self.meta:
            d["meta"] = dict(self.meta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        def load(items):
            nodes = []
            for item in items or ():
                item = dict(item)
                try:
                    name = item.pop("name")
                except KeyError:
                    raise ConfigError("every layer needs a name") from None
                inputs = tuple(item.pop("inputs", ()))
                try:
                    layer = LayerSpec.from_dict(item)
                except (ConfigError, TypeError) as exc:
                    raise LayerError(name, str(exc)) from None
                nodes.append(Node(name, layer, inputs))
            return tuple(nodes)

        try:
            return cls(
                name=d["name"],
                backbone=load(d.get("backbone")),
                head=load(d.get("head")),
                width_multiplier=float(d.get("width_multiplier", 1.0)),
                head_width_multiplier=float(d.get("head_width_multiplier", 1.0)),
                num_classes=int(d.get("num_classes", 0)),
                meta=dict(d.get("meta", {})),
            )
        except KeyError as exc:
            raise ConfigError(f"model spec missing field {exc}") from None

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ModelSpec":
        return cls.from_dict(yaml.safe_load(text))


def load_specs(text: str) -> list[ModelSpec]:
    """Parse one or more ``---``-separated ModelSpec documents."""
    return [ModelSpec.from_dict(doc) for doc in yaml.safe_load_all(text) if doc]


def dump_specs(specs: Iterable[ModelSpec]) -> str:
    return yaml.safe_dump_all([s.to_dict() for s in specs], sort_keys=False)
