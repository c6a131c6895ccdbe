"""Run configuration files: dataset, head(s), training recipe and distillation settings.

A run config is a YAML mapping::

    dataset: {num_classes: 20, channels: 32, ...}      # SynthDatasetSpec fields
    train:   {epochs: 20, initial_lr: 0.003, ...}      # TrainConfig fields
    kd:      {alpha: 1.0, temperature: 1.0}            # KDConfig fields
    head:    {family: tcn, width_mult: 1.0, base_width: 16}
    teacher: path/to/teacher.ckpt | {family: mstcn, width_mult: 3.0, ...}
    students: [{family: ds_tcn, ...}, ...]
    born_again: {max_generations: 5, patience: 1}

Head entries leave ``input_dim`` and ``num_classes`` out; they are taken
from the dataset. Relative checkpoint paths resolve against the config file.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .distill import KDConfig
from .errors import ConfigError
from .heads import HeadConfig
from .train import SynthDatasetSpec, TrainConfig

SECTIONS = ("dataset", "train", "kd", "head", "teacher", "students", "born_again")


@dataclass(frozen=True)
class RunConfig:
    dataset: SynthDatasetSpec
    train: TrainConfig
    kd: KDConfig
    head: HeadConfig | None = None
    teacher: HeadConfig | Path | None = None
    students: tuple[HeadConfig, ...] = ()
    max_generations: int = 5
    patience: int = 1
    source: Path | None = None
    sha256: str = ""
    raw: dict = field(default_factory=dict, compare=False)


def _head(d, ds: SynthDatasetSpec, where: str) -> HeadConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping of head fields")
    d = dict(d)
    for key, value in (("input_dim", ds.channels), ("num_classes", ds.num_classes)):
        if d.setdefault(key, value) != value:
            raise ConfigError(f"{where}.{key} = {d[key]} disagrees with the dataset ({value})")
    try:
        return HeadConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _fields(cls, d, where: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {where} fields {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(doc: dict, base_dir: Path | None = None, seed: int | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("a run config must be a mapping")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    ds = _fields(SynthDatasetSpec, doc.get("dataset"), "dataset")
    train = dict(doc.get("train") or {})
    if seed is not None:
        train["seed"] = seed
    tc = _fields(TrainConfig, train, "train")
    kd = _fields(KDConfig, doc.get("kd"), "kd")
    head = _head(doc["head"], ds, "head") if doc.get("head") is not None else None
    teacher = doc.get("teacher")
    if isinstance(teacher, str):
        teacher = Path(teacher)
        if base_dir is not None and not teacher.is_absolute():
            teacher = base_dir / teacher
    elif teacher is not None:
        teacher = _head(teacher, ds, "teacher")
    students = doc.get("students") or []
    if not isinstance(students, list):
        raise ConfigError("students must be a list of head mappings")
    students = tuple(_head(s, ds, f"students[{i}]") for i, s in enumerate(students))
    ba = doc.get("born_again") or {}
    unknown = set(ba) - {"max_generations", "patience"}
    if unknown:
        raise ConfigError(f"unknown born_again fields {sorted(unknown)}")
    max_gen, patience = int(ba.get("max_generations", 5)), int(ba.get("patience", 1))
    if max_gen < 1 or patience < 1:
        raise ConfigError("born_again.max_generations and patience must be >= 1")
    return RunConfig(ds, tc, kd, head, teacher, students, max_gen, patience, raw=doc)


def packaged_configs() -> list[str]:
    """Names of the run configs shipped with the package."""
    root = resources.files("lipdistill.configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config(ref) -> Path:
    """An existing file path, or the packaged config named ``ref``."""
    path = Path(ref)
    if path.exists() or str(ref) not in packaged_configs():
        return path
    return Path(str(resources.files("lipdistill.configs") / f"{ref}.yaml"))


def load_config(path, seed: int | None = None) -> RunConfig:
    """Parse a run config file (or packaged config name); ``seed`` overrides ``train.seed``."""
    path = resolve_config(path)
    data = path.read_bytes()
    try:
        doc = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(doc, path.parent, seed)
    object.__setattr__(cfg, "source", path)
    object.__setattr__(cfg, "sha256", hashlib.sha256(data).hexdigest())
    return cfg
