import hashlib
import json

import pytest
import yaml

from lipdistill.cli import main
from lipdistill.tensor import load_checkpoint

TINY = {
    "dataset": {"num_classes": 4, "channels": 6, "train_per_class": 12, "val_per_class": 5,
                "test_per_class": 5, "seed": 2},
    "train": {"epochs": 2, "batch_size": 16, "initial_lr": 0.003, "seed": 0},
    "kd": {"alpha": 1.0},
    "head": {"family": "tcn", "width_mult": 1.0, "base_width": 6},
    "born_again": {"max_generations": 2, "patience": 1},
}


@pytest.fixture
def config(tmp_path, monkeypatch):
    monkeypatch.setenv("LIPDISTILL_OUTPUT_ROOT", str(tmp_path / "runs"))

    def write(name="run.yaml", **overrides):
        doc = {**TINY, **overrides}
        path = tmp_path / name
        path.write_text(yaml.safe_dump(doc))
        return path

    return write


def read_json(path):
    return json.loads(path.read_text())


# ---------------------------------------------------------------- audit
def test_audit_table3_json(capsys):
    assert main(["audit", "--models", "lrw-table3", "--input", "1x29x88x88", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["schema_version"] == 1 and out["input"] == [1, 29, 88, 88]
    rows = out["rows"]
    assert len(rows) == 5
    macs = [r["macs"] for r in rows]
    assert macs == sorted(macs, reverse=True)
    assert rows[0]["ratio_params"] == 1.0
    assert rows[0]["params"] / rows[2]["params"] == pytest.approx(3.9, abs=0.4)


def test_audit_table_lists_the_same_numbers(capsys):
    assert main(["audit", "--models", "lrw-table3", "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert main(["audit", "--models", "lrw-table3"]) == 0
    table = capsys.readouterr().out
    for r in rows:
        assert f"{r['params']:,d}" in table and f"{r['macs']:,d}" in table


def test_audit_single_model_has_unit_ratios(tmp_path, capsys):
    spec = tmp_path / "one.yaml"
    spec.write_text(yaml.safe_dump({"input": "1x29x88x88",
                                    "models": [{"backbone": "shufflenet_v2", "beta": 0.5, "head": "tcn"}]}))
    assert main(["audit", "--models", str(spec), "--format", "json"]) == 0
    (row,) = json.loads(capsys.readouterr().out)["rows"]
    assert row["ratio_params"] == 1.0 and row["ratio_macs"] == 1.0


def test_audit_bad_layer_is_named(tmp_path, capsys):
    spec = tmp_path / "bad.yaml"
    spec.write_text(yaml.safe_dump({
        "name": "broken",
        "backbone": [
            {"name": "stem", "kind": "conv2d", "in_channels": 1, "out_channels": 4, "kernel": [3, 3]},
            {"name": "oops", "kind": "conv2d", "in_channels": 4, "out_channels": 4, "kernel": [3, 3], "groups": 3},
        ],
    }))
    assert main(["audit", "--models", str(spec), "--input", "1x8x8"]) == 2
    assert "oops" in capsys.readouterr().err


def test_audit_unknown_preset_is_an_io_error(capsys):
    assert main(["audit", "--models", "no-such-preset"]) == 4


# ---------------------------------------------------------------- training commands
def test_train_writes_artifacts_and_manifest(config, tmp_path):
    cfg = config()
    assert main(["train", "--config", str(cfg), "--out", "t"]) == 0
    out = tmp_path / "runs" / "t"
    manifest = read_json(out / "manifest.json")
    assert manifest["command"] == "train"
    assert manifest["config_sha256"] == hashlib.sha256(cfg.read_bytes()).hexdigest()
    assert manifest["artifacts"]["checkpoints"] == ["gen0.ckpt"]
    for key in ("run_log", "generations", "metrics", "summary"):
        assert (out / manifest["artifacts"][key]).exists()
    log = [json.loads(l) for l in (out / "run_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [0, 1]
    _, meta = load_checkpoint(out / "gen0.ckpt")
    assert meta["seed"] == 0 and meta["dataset"]["num_classes"] == 4
    metrics = read_json(out / "metrics.json")
    assert metrics["config_hash"] == manifest["config_sha256"]
    assert "wall_time" not in metrics and "wall_time" in read_json(out / "summary.json")


def test_rerun_gives_identical_metrics(config, tmp_path):
    cfg = config()
    assert main(["born-again", "--config", str(cfg), "--out", "a"]) == 0
    assert main(["born-again", "--config", str(cfg), "--out", "b"]) == 0
    a = (tmp_path / "runs" / "a" / "metrics.json").read_bytes()
    assert a == (tmp_path / "runs" / "b" / "metrics.json").read_bytes()
    assert main(["born-again", "--config", str(cfg), "--out", "c", "--seed", "5"]) == 0
    c = read_json(tmp_path / "runs" / "c" / "metrics.json")
    assert c["seed"] == 5 and c != json.loads(a)


def test_born_again_with_one_generation_equals_train(config, tmp_path):
    cfg = config(born_again={"max_generations": 1, "patience": 1})
    assert main(["born-again", "--config", str(cfg), "--out", "ba"]) == 0
    assert main(["train", "--config", str(cfg), "--out", "tr"]) == 0
    ba, tr = tmp_path / "runs" / "ba", tmp_path / "runs" / "tr"
    assert (ba / "run_log.jsonl").read_bytes() == (tr / "run_log.jsonl").read_bytes()
    assert (ba / "gen0.ckpt").read_bytes() == (tr / "gen0.ckpt").read_bytes()
    m = read_json(ba / "metrics.json")
    assert m["generations"] == read_json(tr / "metrics.json")["generations"]


def test_born_again_reports_every_generation_and_the_ensemble(config, tmp_path, capsys):
    cfg = config()
    assert main(["born-again", "--config", str(cfg), "--out", "ba"]) == 0
    out = tmp_path / "runs" / "ba"
    m = read_json(out / "metrics.json")
    n = len(m["generations"])
    assert 1 <= n <= 2 and {"ensemble_top1_val", "ensemble_top1_test"} <= set(m)
    gens = [json.loads(l) for l in (out / "generations.jsonl").read_text().splitlines()]
    assert [g["teacher"] for g in gens] == [None, 0][:n]
    capsys.readouterr()
    ckpts = [str(out / f"gen{i}.ckpt") for i in range(n)]
    assert main(["eval", "--checkpoints", *ckpts, "--ensemble", "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert [r["model"] for r in rows] == ckpts + ["ensemble"]
    assert [r["top1"] for r in rows[:-1]] == [g["test_top1"] for g in gens]
    assert rows[-1]["top1"] == m["ensemble_top1_test"]


def test_seq_distill_two_step_chain_records_two_students(config, tmp_path):
    teacher = {"family": "mstcn", "width_mult": 1.0, "base_width": 6}
    assert main(["train", "--config", str(config("t.yaml", head=teacher)), "--out", "teacher"]) == 0
    ckpt = tmp_path / "runs" / "teacher" / "gen0.ckpt"
    students = [{"family": "mstcn", "width_mult": 0.5, "base_width": 6},
                {"family": "ds_mstcn", "width_mult": 0.5, "base_width": 6}]
    cfg = config("seq.yaml", teacher=str(ckpt), students=students)
    assert main(["seq-distill", "--config", str(cfg), "--out", "seq"]) == 0
    out = tmp_path / "runs" / "seq"
    gens = [json.loads(l) for l in (out / "generations.jsonl").read_text().splitlines()]
    assert len(gens) == 2
    assert gens[0]["teacher"] == str(ckpt) and gens[1]["teacher"] == 0
    assert read_json(out / "manifest.json")["artifacts"]["checkpoints"] == ["gen0.ckpt", "gen1.ckpt"]


def test_distill_from_head_config_trains_the_teacher_first(config, tmp_path):
    cfg = config(teacher={"family": "tcn", "width_mult": 2.0, "base_width": 6})
    assert main(["distill", "--config", str(cfg), "--out", "d"]) == 0
    gens = (tmp_path / "runs" / "d" / "generations.jsonl").read_text().splitlines()
    assert [json.loads(g)["teacher"] for g in gens] == [None, 0]


# ---------------------------------------------------------------- eval
def test_eval_single_and_identical_checkpoints(config, tmp_path, capsys):
    assert main(["train", "--config", str(config()), "--out", "t"]) == 0
    ckpt = str(tmp_path / "runs" / "t" / "gen0.ckpt")
    capsys.readouterr()

    def top1s(*args):
        assert main(["eval", "--format", "json", *args]) == 0
        return [r["top1"] for r in json.loads(capsys.readouterr().out)["rows"]]

    plain = top1s("--checkpoints", ckpt)
    assert top1s("--checkpoints", ckpt, "--ensemble") == plain * 2
    assert top1s("--checkpoints", ckpt, ckpt, ckpt, "--ensemble") == plain * 4
    assert top1s("--checkpoints", ckpt, "--split", "val", "--config", str(config())) != []


def test_eval_rejects_incompatible_heads(config, tmp_path):
    assert main(["train", "--config", str(config()), "--out", "t"]) == 0
    other = config("o.yaml", dataset={**TINY["dataset"], "num_classes": 5})
    assert main(["train", "--config", str(other), "--out", "o"]) == 0
    runs = tmp_path / "runs"
    assert main(["eval", "--checkpoints", str(runs / "t" / "gen0.ckpt"), str(runs / "o" / "gen0.ckpt"),
                 "--ensemble"]) == 2


# ---------------------------------------------------------------- failures before training
@pytest.mark.parametrize("overrides", [
    {"train": {"epochs": 2, "learning_rate": 0.1}},
    {"head": {"family": "lstm"}},
    {"head": {"family": "tcn", "num_classes": 9}},
    {"born_again": {"max_generations": 0}},
    {"surprise": 1},
])
def test_invalid_configs_exit_2_without_training(config, tmp_path, overrides, capsys):
    cfg = config(**overrides)
    assert main(["born-again", "--config", str(cfg), "--out", "x"]) == 2
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "runs" / "x").exists()


def test_commands_require_their_sections(config, tmp_path):
    assert main(["seq-distill", "--config", str(config()), "--out", "x"]) == 2
    assert main(["distill", "--config", str(config()), "--out", "x"]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 4


def test_nan_training_exits_3(config):
    cfg = config(train={**TINY["train"], "initial_lr": 1e300})
    assert main(["train", "--config", str(cfg), "--out", "nan"]) == 3
