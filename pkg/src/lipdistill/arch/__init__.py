from .cost import AuditRow, CostReport, LayerCost, audit_table, cost_report, count_macs, count_params, infer_shapes
from .ir import LayerSpec, ModelSpec, Node, dump_specs, load_specs
from .presets import load_models, parse_input_shape, parse_model_list, preset_names
from .zoo import build_model, head_spec

__all__ = [
    "AuditRow", "CostReport", "LayerCost", "audit_table", "cost_report", "count_macs",
    "count_params", "infer_shapes", "LayerSpec", "ModelSpec", "Node", "dump_specs",
    "load_specs", "build_model", "head_spec", "load_models", "parse_input_shape",
    "parse_model_list", "preset_names",
]
