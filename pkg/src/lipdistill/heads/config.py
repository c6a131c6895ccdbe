"""Temporal head configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import yaml

from ..errors import ConfigError

HEAD_FAMILIES = {
    "tcn": ("tcn", False),
    "mstcn": ("mstcn", False),
    "ds_tcn": ("tcn", True),
    "ds_mstcn": ("mstcn", True),
}
DEFAULT_KERNELS = {"tcn": (3,), "mstcn": (3, 5, 7)}


@dataclass(frozen=True)
class HeadConfig:
    """A TCN / MS-TCN head, optionally with depthwise separable temporal convs.

    The total block width is ``base_width * width_mult``; multi-branch heads
    split it evenly across branches (so MS-TCN at 3x and base 256 has three
    branches of 256 channels each).
    """

    kind: str = "tcn"
    depthwise_separable: bool = False
    kernel_sizes: tuple[int, ...] = (3,)
    num_blocks: int = 4
    base_width: int = 256
    width_mult: float = 1.0
    input_dim: int = 512
    num_classes: int = 500
    dropout: float = 0.2
    dilation_base: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        self.validate()

    def validate(self) -> None:
        if self.kind not in DEFAULT_KERNELS:
            raise ConfigError(f"unknown head kind {self.kind!r}")
        if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd and positive, got {self.kernel_sizes}")
        if self.kind == "tcn" and len(self.kernel_sizes) != 1:
            raise ConfigError("a tcn head has exactly one kernel size")
        if self.num_blocks < 1 or self.input_dim < 1 or self.num_classes < 1:
            raise ConfigError("num_blocks, input_dim and num_classes must be positive")
        if self.width < 1 or self.width % self.num_branches:
            raise ConfigError(f"width {self.width} is not divisible by {self.num_branches} branches")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.dilation_base < 1:
            raise ConfigError("dilation_base must be >= 1")

    @property
    def width(self) -> int:
        return int(round(self.base_width * self.width_mult))

    @property
    def num_branches(self) -> int:
        return len(self.kernel_sizes)

    @property
    def branch_width(self) -> int:
        return self.width // self.num_branches

    @property
    def family(self) -> str:
        return ("ds_" if self.depthwise_separable else "") + self.kind

    def dilation(self, block: int) -> int:
        return self.dilation_base ** block

    def block_in(self, block: int) -> int:
        return self.input_dim if block == 0 else self.width

    def needs_projection(self, block: int) -> bool:
        # The residual is projected whenever the per-branch share of the input
        # width differs from the block width; for multi-branch heads this holds
        # for every block, for single-branch heads only when widths differ.
        return self.block_in(block) // self.num_branches != self.width

    @classmethod
    def named(cls, family: str, width_mult: float = 1.0, **kw) -> "HeadConfig":
        try:
            kind, ds = HEAD_FAMILIES[family]
        except KeyError:
            raise ConfigError(f"unknown head family {family!r}; choose from {sorted(HEAD_FAMILIES)}") from None
        kw.setdefault("kernel_sizes", DEFAULT_KERNELS[kind])
        return cls(kind=kind, depthwise_separable=ds, width_mult=width_mult, **kw)

    def replace(self, **kw) -> "HeadConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        d = dict(d)
        if "family" in d:
            family = d.pop("family")
            return cls.named(family, **d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown head fields {sorted(unknown)}")
        return cls(**d)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "HeadConfig":
        return cls.from_dict(yaml.safe_load(text))
