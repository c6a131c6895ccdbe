"""Model lists for the audit: bundled presets and user spec files."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import yaml

from ..errors import ConfigError
from .ir import ModelSpec
from .zoo import build_model

BUILD_KEYS = {"backbone", "head", "head_width", "num_classes", "beta", "base_width", "dropout", "temporal_padding"}


def preset_names() -> list[str]:
    root = resources.files("lipdistill.presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def parse_input_shape(text: str) -> tuple[int, ...]:
    """``"1x29x88x88"`` -> ``(1, 29, 88, 88)``."""
    try:
        dims = tuple(int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"input shape must look like CxTxHxW, got {text!r}") from None
    if not dims or any(d < 0 for d in dims):
        raise ConfigError(f"input shape must be non-negative integers, got {text!r}")
    return dims


def _model(entry: dict, temporal_padding: str | None) -> ModelSpec:
    if not isinstance(entry, dict) or "backbone" not in entry or "head" not in entry:
        raise ConfigError(f"model entry needs backbone and head: {entry!r}")
    unknown = set(entry) - BUILD_KEYS
    if unknown:
        raise ConfigError(f"unknown model entry fields {sorted(unknown)}")
    kw = dict(entry)
    if temporal_padding is not None:
        kw["temporal_padding"] = temporal_padding
    return build_model(**kw)


def parse_model_list(text: str, temporal_padding: str | None = None) -> tuple[list[ModelSpec], tuple[int, ...] | None]:
    """Models and (optional) default input shape from YAML text.

    Either one mapping with a ``models`` list of builder entries (plus an
    optional ``input``), or one or more full ModelSpec documents.
    """
    try:
        docs = [d for d in yaml.safe_load_all(text) if d]
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparsable model file: {exc}") from None
    if not docs:
        raise ConfigError("model file is empty")
    if len(docs) == 1 and isinstance(docs[0], dict) and "models" in docs[0]:
        doc = docs[0]
        shape = parse_input_shape(doc["input"]) if "input" in doc else None
        return [_model(e, temporal_padding) for e in doc["models"]], shape
    specs = []
    for d in docs:
        if not isinstance(d, dict):
            raise ConfigError("each model document must be a mapping")
        specs.append(ModelSpec.from_dict(d))
    return specs, None


def load_models(ref: str, temporal_padding: str | None = None) -> tuple[list[ModelSpec], tuple[int, ...] | None]:
    """Resolve ``ref`` as a bundled preset name first, then as a file path."""
    if ref in preset_names():
        text = resources.files("lipdistill.presets").joinpath(ref + ".yaml").read_text()
    else:
        path = Path(ref)
        if not path.exists():
            raise FileNotFoundError(f"no preset or file named {ref!r} (presets: {', '.join(preset_names())})")
        text = path.read_text()
    return parse_model_list(text, temporal_padding)
