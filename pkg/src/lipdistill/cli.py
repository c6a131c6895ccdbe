"""``lipdistill`` command line: cost audits, training runs, distillation chains, evaluation.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .arch import audit_table, load_models, parse_input_shape
from .arch.zoo import TEMPORAL_PADDING
from .distill import DistillSchedule, GenerationRecord, born_again, ensemble_top1, run_schedule, train_generation
from .errors import ConfigError, LipDistillError, NumericalError
from .heads import TemporalHead
from .runconfig import RunConfig, load_config
from .train import EpochRecord, SynthDatasetSpec, evaluate, make_synth_dataset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "LIPDISTILL_OUTPUT_ROOT"
AUDIT_SCHEMA_VERSION = 1

log = logging.getLogger("lipdistill")


@dataclass
class RunManifest:
    command: str
    config_path: str
    config_sha256: str
    seed: int
    artifacts: dict[str, list[str] | str] = field(default_factory=dict)
    tool_version: str = __version__

    def write(self, out: Path) -> None:
        _write_json(out / "manifest.json", asdict(self))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ audit
def cmd_audit(args) -> int:
    specs, default_shape = load_models(args.models, args.temporal_padding)
    if args.input:
        shape = parse_input_shape(args.input)
    elif default_shape is not None:
        shape = default_shape
    else:
        raise ConfigError("--input is required for spec files that do not name one")
    rows = audit_table(specs, shape)
    if args.format == "json":
        payload = {
            "schema_version": AUDIT_SCHEMA_VERSION,
            "input": list(shape),
            "rows": [r.record() for r in rows],
        }
        print(json.dumps(payload, indent=2))
        return EXIT_OK
    width = max(len(r.report.name) for r in rows)
    print(f"input {'x'.join(map(str, shape))}")
    print(f"{'model':<{width}}  {'params':>12}  {'MACs':>16}  {'params x':>8}  {'MACs x':>8}")
    for r in rows:
        rep = r.report
        print(f"{rep.name:<{width}}  {rep.params:>12,d}  {rep.macs:>16,d}  {r.ratio_params:>8.2f}  {r.ratio_macs:>8.2f}")
    return EXIT_OK


# --------------------------------------------------------------- training
def _out_dir(args, command: str, cfg: RunConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    out = Path(args.out) if args.out else Path(f"{command}-{cfg.sha256[:8]}-seed{cfg.train.seed}")
    if not out.is_absolute():
        out = root / out
    out.mkdir(parents=True, exist_ok=True)
    return out


class _RunWriter:
    """Streams epoch records and generation summaries, saves checkpoints."""

    def __init__(self, out: Path, dataset_spec: SynthDatasetSpec):
        self.out = out
        self.dataset_spec = dataset_spec
        self.records: list[GenerationRecord] = []
        self.checkpoints: list[str] = []
        (out / "run_log.jsonl").write_text("")
        (out / "generations.jsonl").write_text("")

    def epoch(self, rec: EpochRecord) -> None:
        with open(self.out / "run_log.jsonl", "a") as fh:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

    def generation(self, rec: GenerationRecord) -> None:
        name = f"gen{rec.index}.ckpt"
        rec.model.save(self.out / name, {
            "generation": rec.index,
            "seed": rec.seed,
            "teacher": rec.teacher,
            "dataset": self.dataset_spec.to_dict(),
        })
        self.checkpoints.append(name)
        summary = {**rec.summary(), "checkpoint": name}
        self.records.append(rec)
        with open(self.out / "generations.jsonl", "a") as fh:
            fh.write(json.dumps(summary, sort_keys=True) + "\n")


def _run(args, command: str, body) -> int:
    cfg = load_config(args.config, seed=args.seed)
    _validate_for(command, cfg)
    out = _out_dir(args, command, cfg)
    writer = _RunWriter(out, cfg.dataset)
    t0 = time.perf_counter()
    dataset = make_synth_dataset(cfg.dataset)
    extra = body(cfg, dataset, writer) or {}
    wall = time.perf_counter() - t0

    final = writer.records[-1]
    metrics = {
        "config_hash": cfg.sha256,
        "seed": cfg.train.seed,
        "top1_val": final.val_top1,
        "top1_test": final.test_top1,
        "generations": [{"index": r.index, "val_top1": r.val_top1, "test_top1": r.test_top1}
                        for r in writer.records],
        **extra,
    }
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "summary.json", {
        "config_hash": cfg.sha256, "seed": cfg.train.seed,
        "top1_val": final.val_top1, "top1_test": final.test_top1, "wall_time": wall,
    })
    RunManifest(
        command=command,
        config_path=str(cfg.source),
        config_sha256=cfg.sha256,
        seed=cfg.train.seed,
        artifacts={
            "checkpoints": writer.checkpoints,
            "run_log": "run_log.jsonl",
            "generations": "generations.jsonl",
            "metrics": "metrics.json",
            "summary": "summary.json",
        },
    ).write(out)
    print(f"{command}: val top-1 {final.val_top1:.4f}, test top-1 {final.test_top1:.4f} -> {out}")
    return EXIT_OK


def _validate_for(command: str, cfg: RunConfig) -> None:
    if command in ("train", "distill", "born-again") and cfg.head is None:
        raise ConfigError(f"{command} needs a 'head' section")
    if command == "distill" and cfg.teacher is None:
        raise ConfigError("distill needs a 'teacher' (checkpoint path or head)")
    if command == "seq-distill":
        if cfg.teacher is None:
            raise ConfigError("seq-distill needs a 'teacher'")
        if not cfg.students:
            raise ConfigError("seq-distill needs a non-empty 'students' list")
    if isinstance(cfg.teacher, Path) and command in ("distill", "seq-distill"):
        teacher = TemporalHead.load(cfg.teacher)
        if teacher.cfg.num_classes != cfg.dataset.num_classes or teacher.cfg.input_dim != cfg.dataset.channels:
            raise ConfigError(f"teacher {cfg.teacher} does not match the dataset's classes/channels")


def cmd_train(args) -> int:
    def body(cfg, dataset, w):
        w.generation(train_generation(None, cfg.head, dataset, cfg.train, cfg.kd, cfg.train.seed,
                                      on_epoch=w.epoch))
    return _run(args, "train", body)


def cmd_distill(args) -> int:
    def body(cfg, dataset, w):
        run_schedule(DistillSchedule(cfg.teacher, (cfg.head,)), dataset, cfg.train, cfg.kd,
                     on_epoch=w.epoch, on_record=w.generation)
    return _run(args, "distill", body)


def cmd_seq_distill(args) -> int:
    def body(cfg, dataset, w):
        run_schedule(DistillSchedule(cfg.teacher, cfg.students), dataset, cfg.train, cfg.kd,
                     on_epoch=w.epoch, on_record=w.generation)
    return _run(args, "seq-distill", body)


def cmd_born_again(args) -> int:
    def body(cfg, dataset, w):
        chain = born_again(cfg.head, dataset, cfg.train, cfg.kd, cfg.max_generations, cfg.patience,
                           on_epoch=w.epoch, on_record=w.generation)
        models = [r.model for r in chain]
        return {
            "ensemble_top1_val": ensemble_top1(models, dataset.val),
            "ensemble_top1_test": ensemble_top1(models, dataset.test),
        }
    return _run(args, "born-again", body)


# ------------------------------------------------------------------- eval
def cmd_eval(args) -> int:
    heads = [TemporalHead.load(p) for p in args.checkpoints]
    if args.config:
        spec = load_config(args.config).dataset
    else:
        from .tensor import load_checkpoint
        _, meta = load_checkpoint(args.checkpoints[0])
        if "dataset" not in meta:
            raise ConfigError("checkpoint does not record its dataset; pass --config")
        spec = SynthDatasetSpec(**meta["dataset"])
    for p, h in zip(args.checkpoints, heads):
        if h.cfg.num_classes != spec.num_classes or h.cfg.input_dim != spec.channels:
            raise ConfigError(f"{p}: head ({h.cfg.input_dim} channels, {h.cfg.num_classes} classes) "
                              f"does not fit the dataset ({spec.channels}, {spec.num_classes})")
    split = make_synth_dataset(spec).split(args.split)
    rows = [{"model": str(p), "top1": evaluate(h, split)} for p, h in zip(args.checkpoints, heads)]
    if args.ensemble:
        rows.append({"model": "ensemble", "top1": ensemble_top1(heads, split, args.average)})
    if args.format == "json":
        print(json.dumps({"split": args.split, "rows": rows}, indent=2))
    else:
        width = max(len(r["model"]) for r in rows)
        print(f"{'model':<{width}}  top-1 ({args.split})")
        for r in rows:
            print(f"{r['model']:<{width}}  {100 * r['top1']:.2f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipdistill", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", help="parameter and MAC counts for a model list")
    a.add_argument("--models", required=True, help="preset name (lrw-table3, lrw1000-table4) or YAML file")
    a.add_argument("--input", help="input shape CxTxHxW; defaults to the preset's")
    a.add_argument("--format", choices=("table", "json"), default="table")
    a.add_argument("--temporal-padding", choices=TEMPORAL_PADDING, default=None,
                   help="how head convs are padded for MAC counting (default: trim)")
    a.set_defaults(func=cmd_audit)

    for name, func, text in (
        ("train", cmd_train, "train one head with cross-entropy"),
        ("distill", cmd_distill, "distil a teacher into the configured head"),
        ("born-again", cmd_born_again, "self-distillation in generations"),
        ("seq-distill", cmd_seq_distill, "teacher -> student chain"),
    ):
        t = sub.add_parser(name, help=text)
        t.add_argument("--config", required=True, help="run config YAML or packaged name (e.g. reference)")
        t.add_argument("--out", help=f"output directory (relative to ${OUTPUT_ROOT_ENV}, default ./runs)")
        t.add_argument("--seed", type=int, help="override train.seed")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="top-1 of checkpoints, optionally as an ensemble")
    e.add_argument("--checkpoints", nargs="+", required=True)
    e.add_argument("--ensemble", action="store_true")
    e.add_argument("--average", choices=("probs", "logits"), default="probs")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--config", help="run config whose dataset to use (default: recorded in the checkpoint)")
    e.add_argument("--format", choices=("table", "json"), default="table")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, LipDistillError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
