"""Reference model family: 3D stem + 2D backbone + temporal head.

Backbones follow the canonical ResNet-18 and ShuffleNet v2 layouts with the
first convolution replaced by a 5x7x7 3D stem (stride 1 in time) and a
3x3 spatial max-pool. Per-frame features are pooled over space and folded to
``[C, T]`` before the head.
"""

from __future__ import annotations

from ..errors import ConfigError
from ..heads.config import HeadConfig
from .ir import LayerSpec, ModelSpec, Node

SHUFFLENET_WIDTHS = {
    0.5: (24, 48, 96, 192, 1024),
    1.0: (24, 116, 232, 464, 1024),
}
SHUFFLENET_REPEATS = (4, 8, 4)
RESNET18_WIDTHS = (64, 128, 256, 512)


class _Builder:
    """Appends uniquely named nodes and remembers the last one."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.nodes: list[Node] = []
        self.last: str | None = None

    def add(self, name: str, layer: LayerSpec, inputs: tuple[str, ...] = ()) -> str:
        full = f"{self.prefix}{name}"
        if not inputs and self.last is not None:
            inputs = (self.last,)
        self.nodes.append(Node(full, layer, tuple(inputs)))
        self.last = full
        return full

    def bn(self, name: str, c: int) -> str:
        return self.add(name, LayerSpec("batchnorm", in_channels=c))

    def act(self, name: str, c: int, fn: str = "relu") -> str:
        return self.add(name, LayerSpec("activation", in_channels=c, fn=fn))


def _stem(b: _Builder, out_ch: int) -> None:
    b.add("conv", LayerSpec("conv3d", 1, out_ch, kernel=(5, 7, 7), stride=(1, 2, 2), padding=(2, 3, 3)))
    b.bn("bn", out_ch)
    b.act("act", out_ch)
    b.add("pool", LayerSpec("maxpool", kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)))


def _conv2d(cin, cout, k, stride=1, groups=1):
    kind = "depthwise_conv" if groups == cin and groups > 1 else ("pointwise_conv" if k == 1 else "conv2d")
    return LayerSpec(kind, cin, cout, kernel=(k, k), stride=(stride, stride),
                     padding=(k // 2, k // 2), groups=groups)


def _fold(b: _Builder) -> None:
    b.add("gap", LayerSpec("avgpool_global", axes=2))
    b.add("fold", LayerSpec("reshape_fold_time"))


def resnet18_backbone(prefix: str = "backbone.") -> tuple[list[Node], int]:
    b = _Builder(prefix)
    _stem(b, RESNET18_WIDTHS[0])
    cin = RESNET18_WIDTHS[0]
    for stage, cout in enumerate(RESNET18_WIDTHS):
        for blk in range(2):
            stride = 2 if stage > 0 and blk == 0 else 1
            p = f"layer{stage + 1}.{blk}."
            entry = b.last
            b.add(p + "conv1", _conv2d(cin, cout, 3, stride))
            b.bn(p + "bn1", cout)
            b.act(p + "relu1", cout)
            b.add(p + "conv2", _conv2d(cout, cout, 3))
            main = b.bn(p + "bn2", cout)
            skip = entry
            if stride != 1 or cin != cout:
                b.add(p + "down.conv", _conv2d(cin, cout, 1, stride), inputs=(entry,))
                skip = b.bn(p + "down.bn", cout)
            b.add(p + "add", LayerSpec("residual_add"), inputs=(main, skip))
            b.act(p + "relu2", cout)
            cin = cout
    _fold(b)
    return b.nodes, cin


def shufflenet_v2_backbone(beta: float, prefix: str = "backbone.") -> tuple[list[Node], int]:
    try:
        widths = SHUFFLENET_WIDTHS[float(beta)]
    except KeyError:
        raise ConfigError(f"unsupported ShuffleNet v2 width multiplier {beta}; choose 0.5 or 1.0") from None
    b = _Builder(prefix)
    _stem(b, widths[0])
    cin = widths[0]
    for stage, (cout, reps) in enumerate(zip(widths[1:4], SHUFFLENET_REPEATS)):
        half = cout // 2
        for i in range(reps):
            p = f"stage{stage + 2}.{i}."
            entry = b.last
            if i == 0:
                b.add(p + "b1.dw", _conv2d(cin, cin, 3, 2, groups=cin), inputs=(entry,))
                b.bn(p + "b1.bn1", cin)
                b.add(p + "b1.pw", _conv2d(cin, half, 1))
                b.bn(p + "b1.bn2", half)
                left = b.act(p + "b1.relu", half)
                b.add(p + "b2.pw1", _conv2d(cin, half, 1), inputs=(entry,))
                stride = 2
            else:
                left = b.add(p + "split.keep", LayerSpec("channel_slice", start=0, stop=half), inputs=(entry,))
                b.add(p + "split.proc", LayerSpec("channel_slice", start=half, stop=cout), inputs=(entry,))
                b.add(p + "b2.pw1", _conv2d(half, half, 1))
                stride = 1
            b.bn(p + "b2.bn1", half)
            b.act(p + "b2.relu1", half)
            b.add(p + "b2.dw", _conv2d(half, half, 3, stride, groups=half))
            b.bn(p + "b2.bn2", half)
            b.add(p + "b2.pw2", _conv2d(half, half, 1))
            b.bn(p + "b2.bn3", half)
            right = b.act(p + "b2.relu2", half)
            b.add(p + "concat", LayerSpec("concat_branches"), inputs=(left, right))
            b.add(p + "shuffle", LayerSpec("channel_shuffle", in_channels=cout, groups=2))
            cin = cout
    b.add("conv_last", _conv2d(cin, widths[4], 1))
    b.bn("conv_last.bn", widths[4])
    b.act("conv_last.relu", widths[4])
    _fold(b)
    return b.nodes, widths[4]


def head_nodes(cfg: HeadConfig, prefix: str = "head.", entry: str | None = None,
               temporal_padding: str = "trim") -> list[Node]:
    """The head as IR; mirrors the trainable layout in :mod:`lipdistill.heads.model`.

    With ``temporal_padding="trim"`` every temporal conv pads ``(k-1)*d``
    frames on both sides and a trim node then drops ``(k-1)*d/2`` from each
    end. The result equals same-padding exactly but the conv is costed on
    the longer intermediate output, which is how the reference head computes
    it. ``"same"`` costs the conv on ``T`` outputs only.
    """
    if temporal_padding not in TEMPORAL_PADDING:
        raise ConfigError(f"temporal_padding must be one of {TEMPORAL_PADDING}")
    full = temporal_padding == "trim"
    b = _Builder(prefix)
    b.last = entry
    W, wb = cfg.width, cfg.branch_width
    for blk in range(cfg.num_blocks):
        d = cfg.dilation(blk)
        block_input = b.last
        stage_in = block_input
        cin = cfg.block_in(blk)
        for stage in range(2):
            outs = []
            for k in cfg.kernel_sizes:
                p = f"block{blk}.conv{stage}.k{k}."
                half = (k - 1) * d // 2
                pad = 2 * half if full else half
                if cfg.depthwise_separable:
                    b.add(p + "dw", LayerSpec("depthwise_conv", cin, cin, kernel=(k,), padding=(pad,),
                                              dilation=(d,), groups=cin), inputs=_src(stage_in))
                    if full and half:
                        b.add(p + "dw_trim", LayerSpec("temporal_trim", trim=half))
                    b.bn(p + "dw_bn", cin)
                    b.act(p + "dw_act", cin, "prelu")
                    b.add(p + "pw", LayerSpec("pointwise_conv", cin, wb, kernel=(1,)))
                else:
                    b.add(p + "conv", LayerSpec("conv1d", cin, wb, kernel=(k,), padding=(pad,),
                                                dilation=(d,), has_bias=True), inputs=_src(stage_in))
                    if full and half:
                        b.add(p + "trim", LayerSpec("temporal_trim", trim=half))
                b.bn(p + "bn", wb)
                outs.append(b.act(p + "act", wb, "prelu"))
            if len(outs) > 1:
                stage_in = b.add(f"block{blk}.concat{stage}", LayerSpec("concat_branches"), inputs=tuple(outs))
            else:
                stage_in = outs[0]
            cin = W
        skip = block_input
        if cfg.needs_projection(blk):
            skip = b.add(f"block{blk}.proj", LayerSpec("conv1d", cfg.block_in(blk), W, kernel=(1,), has_bias=True),
                         inputs=_src(block_input))
        b.add(f"block{blk}.add", LayerSpec("residual_add"), inputs=(stage_in, skip or "input"))
        b.act(f"block{blk}.act", W, "prelu")
    b.add("pool", LayerSpec("avgpool_global", axes=1))
    b.add("fc", LayerSpec("linear", W, cfg.num_classes))
    return b.nodes


TEMPORAL_PADDING = ("trim", "same")


def _src(name: str | None) -> tuple[str, ...]:
    return (name,) if name else ("input",)


def head_spec(cfg: HeadConfig, name: str | None = None, temporal_padding: str = "trim") -> ModelSpec:
    """A head-only ModelSpec whose input is a ``[input_dim, T]`` feature sequence."""
    return ModelSpec(
        name=name or f"{cfg.family}({cfg.width_mult:g}x)",
        head=tuple(head_nodes(cfg, temporal_padding=temporal_padding)),
        head_width_multiplier=cfg.width_mult,
        num_classes=cfg.num_classes,
        meta={"head": cfg.to_dict()},
    )


BACKBONES = ("resnet18", "shufflenet_v2")
DISPLAY = {"mstcn": "MS-TCN", "tcn": "TCN", "ds_mstcn": "DS-MS-TCN", "ds_tcn": "DS-TCN"}


def build_model(backbone: str, head: str, head_width: float = 1.0, num_classes: int = 500,
                beta: float = 1.0, base_width: int = 256, dropout: float = 0.2,
                temporal_padding: str = "trim") -> ModelSpec:
    """Full video model: ``backbone`` in {resnet18, shufflenet_v2}; ``head`` a head family name."""
    if backbone == "resnet18":
        bb, feat = resnet18_backbone()
        bb_name, beta = "ResNet-18", 1.0
    elif backbone == "shufflenet_v2":
        bb, feat = shufflenet_v2_backbone(beta)
        bb_name = f"ShuffleNet v2 ({beta:g}x)"
    else:
        raise ConfigError(f"unknown backbone {backbone!r}; choose from {BACKBONES}")
    cfg = HeadConfig.named(head, head_width, input_dim=feat, num_classes=num_classes,
                           base_width=base_width, dropout=dropout)
    return ModelSpec(
        name=f"{bb_name} + {DISPLAY[head]} ({head_width:g}x)",
        backbone=tuple(bb),
        head=tuple(head_nodes(cfg, entry=bb[-1].name, temporal_padding=temporal_padding)),
        width_multiplier=beta,
        head_width_multiplier=head_width,
        num_classes=num_classes,
        meta={"backbone": backbone, "head": cfg.to_dict()},
    )
