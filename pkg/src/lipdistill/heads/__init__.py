from .config import HEAD_FAMILIES, HeadConfig
from .model import HeadParams, TemporalHead, head_forward, head_param_count, init_params, param_shapes

__all__ = [
    "HEAD_FAMILIES", "HeadConfig", "HeadParams", "TemporalHead", "head_forward",
    "head_param_count", "init_params", "param_shapes",
]
