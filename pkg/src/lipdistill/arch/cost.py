"""Shape inference and analytical parameter / multiply-accumulate counting.

Conventions:

* conv params: ``C_out * (C_in / groups) * prod(kernel)`` plus ``C_out`` with bias;
  MACs: output volume (including any leading per-frame axes) times
  ``C_out * (C_in / groups) * prod(kernel)``.
* linear params ``F_out * F_in + F_out``, MACs ``F_out * F_in``.
* batchnorm contributes its two affine vectors (running stats are buffers,
  not parameters); PReLU contributes one slope per channel.
* normalisation, activation, pooling, shuffles, slices, trims and adds cost 0 MACs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence

from ..errors import LayerError
from .ir import CONV_KINDS, LayerSpec, ModelSpec

Shape = tuple[int, ...]


def _window(n: int, k: int, s: int, p: int, d: int) -> int:
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def layer_output_shape(name: str, layer: LayerSpec, shapes: Sequence[Shape]) -> Shape:
    kind = layer.kind
    if kind == "residual_add":
        if len(shapes) < 2:
            raise LayerError(name, "residual_add needs at least two inputs")
        if any(s != shapes[0] for s in shapes):
            raise LayerError(name, f"residual_add operands differ: {list(shapes)}")
        return shapes[0]
    if kind == "concat_branches":
        if any(len(s) != len(shapes[0]) or s[1:] != shapes[0][1:] for s in shapes):
            raise LayerError(name, f"concat_branches operands differ outside the channel axis: {list(shapes)}")
        return (sum(s[0] for s in shapes),) + shapes[0][1:]
    if len(shapes) != 1:
        raise LayerError(name, f"{kind} takes one input, got {len(shapes)}")
    (shape,) = shapes
    c = shape[0]

    if kind in CONV_KINDS or kind == "maxpool":
        n = len(layer.kernel)
        if len(shape) - 1 < n:
            raise LayerError(name, f"{n}-d kernel on input of shape {shape}")
        if kind in CONV_KINDS and c != layer.in_channels:
            raise LayerError(name, f"expects {layer.in_channels} input channels, got {c}")
        lead, spatial = shape[1:len(shape) - n], shape[len(shape) - n:]
        out = tuple(_window(L, k, s, p, d) for L, k, s, p, d in
                    zip(spatial, layer.kernel, layer.stride, layer.padding, layer.dilation))
        if any(v < 1 for v in out):
            raise LayerError(name, f"geometry yields empty output {out} from {spatial}")
        ch = layer.out_channels if kind in CONV_KINDS else c
        return (ch,) + lead + out
    if kind in ("batchnorm", "channel_shuffle") or (kind == "activation" and layer.fn == "prelu"):
        if c != layer.in_channels:
            raise LayerError(name, f"expects {layer.in_channels} channels, got {c}")
        if kind == "channel_shuffle" and c % layer.groups:
            raise LayerError(name, f"shuffle groups {layer.groups} do not divide {c}")
        return shape
    if kind == "activation":
        return shape
    if kind == "avgpool_global":
        if len(shape) - 1 < layer.axes:
            raise LayerError(name, f"cannot pool {layer.axes} axes of {shape}")
        return shape[:len(shape) - layer.axes] + (1,) * layer.axes
    if kind == "reshape_fold_time":
        if len(shape) < 2:
            raise LayerError(name, f"need at least [C, T], got {shape}")
        if any(v != 1 for v in shape[2:]):
            raise LayerError(name, f"trailing axes must be pooled to 1 before folding, got {shape}")
        return shape[:2]
    if kind == "temporal_trim":
        if len(shape) < 2 or shape[-1] - 2 * layer.trim < 1:
            raise LayerError(name, f"cannot trim {layer.trim} frames from each end of {shape}")
        return shape[:-1] + (shape[-1] - 2 * layer.trim,)
    if kind == "channel_slice":
        if layer.stop > c:
            raise LayerError(name, f"slice [{layer.start}:{layer.stop}] exceeds {c} channels")
        return (layer.stop - layer.start,) + shape[1:]
    if kind == "linear":
        if prod(shape) != layer.in_channels:
            raise LayerError(name, f"expects {layer.in_channels} features, got shape {shape}")
        return (layer.out_channels,)
    raise LayerError(name, f"no shape rule for {kind}")


def layer_params(layer: LayerSpec) -> int:
    kind = layer.kind
    if kind in CONV_KINDS:
        w = layer.out_channels * (layer.in_channels // layer.groups) * prod(layer.kernel)
        return w + (layer.out_channels if layer.has_bias else 0)
    if kind == "linear":
        return layer.out_channels * layer.in_channels + (layer.out_channels if layer.has_bias else 0)
    if kind == "batchnorm":
        return 2 * layer.in_channels
    if kind == "activation" and layer.fn == "prelu":
        return layer.in_channels
    return 0


def layer_macs(layer: LayerSpec, out_shape: Shape) -> int:
    if layer.kind in CONV_KINDS:
        return prod(out_shape) * (layer.in_channels // layer.groups) * prod(layer.kernel)
    if layer.kind == "linear":
        return layer.out_channels * layer.in_channels
    return 0


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    out_shape: Shape
    params: int
    macs: int
    section: str


@dataclass(frozen=True)
class CostReport:
    name: str
    input_shape: Shape
    params: int
    macs: int
    breakdown: tuple[LayerCost, ...] = field(repr=False)

    def section_totals(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for lc in self.breakdown:
            p, m = out.get(lc.section, (0, 0))
            out[lc.section] = (p + lc.params, m + lc.macs)
        return out


def infer_shapes(model: ModelSpec, input_shape: Sequence[int]) -> dict[str, Shape]:
    """Output shape of every node, keyed by node name (plus ``"input"``)."""
    shapes: dict[str, Shape] = {"input": tuple(int(v) for v in input_shape)}
    for node, inputs in model.resolved():
        shapes[node.name] = layer_output_shape(node.name, node.layer, [shapes[i] for i in inputs])
    return shapes


def count_params(model: ModelSpec) -> int:
    return sum(layer_params(node.layer) for node in model.nodes())


def count_macs(model: ModelSpec, input_shape: Sequence[int]) -> int:
    return cost_report(model, input_shape).macs


def cost_report(model: ModelSpec, input_shape: Sequence[int]) -> CostReport:
    shapes = infer_shapes(model, input_shape)
    head_names = {n.name for n in model.head}
    rows = []
    for node in model.nodes():
        rows.append(LayerCost(
            name=node.name,
            kind=node.layer.kind,
            out_shape=shapes[node.name],
            params=layer_params(node.layer),
            macs=layer_macs(node.layer, shapes[node.name]),
            section="head" if node.name in head_names else "backbone",
        ))
    return CostReport(
        name=model.name,
        input_shape=tuple(input_shape),
        params=sum(r.params for r in rows),
        macs=sum(r.macs for r in rows),
        breakdown=tuple(rows),
    )


@dataclass(frozen=True)
class AuditRow:
    report: CostReport
    ratio_params: float
    ratio_macs: float

    def record(self) -> dict:
        return {
            "name": self.report.name,
            "params": self.report.params,
            "macs": self.report.macs,
            "ratio_params": self.ratio_params,
            "ratio_macs": self.ratio_macs,
        }


def audit_table(specs: Sequence[ModelSpec], input_shape: Sequence[int]) -> list[AuditRow]:
    """Cost reports plus reduction ratios relative to the first row (row1 / rowN)."""
    if not specs:
        raise ValueError("audit_table needs at least one model")
    reports = [cost_report(s, input_shape) for s in specs]
    ref = reports[0]
    return [AuditRow(r, ref.params / r.params, ref.macs / r.macs) for r in reports]
