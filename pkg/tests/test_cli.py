"""Command-line behavior: exit codes, artifacts, determinism, reports."""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from lacvit.cli import main
from lacvit.data import load_cifar_binary

TINY = """
run.seed = 11
data.num_classes = 2
data.per_class_train = 4
data.per_class_val = 2
data.image_size = 32
vit.patch_size = 8
vit.embed_dim = 16
vit.depth = 1
vit.heads = 2
stage1.epochs = 2
stage1.batch_size = 4
stage2.epochs = 2
stage2.batch_size = 4
ce.epochs = 1
ce.batch_size = 4
"""


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "run.cfg"
    body = TINY + (
        f"run.out_dir = {tmp_path / 'out'}\n"
        f"data.train_path = {tmp_path / 'data' / 'train.bin'}\n"
        f"data.val_path = {tmp_path / 'data' / 'val.bin'}\n"
    )
    cfg.write_text(body)
    return tmp_path, cfg


def test_synth_data_round_trip_and_hash(workspace):
    tmp, cfg = workspace
    assert main(["synth-data", str(cfg)]) == 0
    train = tmp / "data" / "train.bin"
    assert train.stat().st_size == 8 * 3073
    ds = load_cifar_binary(train, 2)
    assert len(ds) == 8
    digest = hashlib.sha256(train.read_bytes()).hexdigest()
    assert main(["synth-data", str(cfg)]) == 0
    assert hashlib.sha256(train.read_bytes()).hexdigest() == digest
    assert (tmp / "out" / "config_synth-data.cfg").exists()


def test_unknown_key_exits_2(workspace):
    tmp, cfg = workspace
    assert main(["synth-data", str(cfg), "--set", "bogus.key=1"]) == 2


def test_head_without_checkpoint_exits_2(workspace):
    tmp, cfg = workspace
    assert main(["synth-data", str(cfg)]) == 0
    assert main(["train", str(cfg), "--stage", "head"]) == 2


def test_missing_dataset_exits_2(workspace):
    tmp, cfg = workspace
    assert main(["train", str(cfg), "--stage", "contrastive"]) == 2


def test_eval_missing_checkpoint_exits_2(workspace):
    tmp, cfg = workspace
    assert main(["synth-data", str(cfg)]) == 0
    assert main(["eval", str(cfg), "--checkpoint", str(tmp / "nope.ckpt")]) == 2


def test_corrupt_dataset_exits_3(workspace):
    tmp, cfg = workspace
    (tmp / "data").mkdir()
    (tmp / "data" / "train.bin").write_bytes(b"short")
    assert main(["train", str(cfg), "--stage", "contrastive"]) == 3


def test_full_pipeline_end_to_end(workspace):
    tmp, cfg = workspace
    out = tmp / "out"
    assert main(["synth-data", str(cfg)]) == 0
    assert main(["train", str(cfg), "--stage", "contrastive", "--view-digest"]) == 0
    assert (out / "stage1.ckpt").exists()
    assert (out / "view_digest_contrastive.txt").exists()
    assert (out / "loss_contrastive.png").exists()

    with open(out / "metrics_contrastive.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["split"] for r in rows] == ["train", "train"]

    assert main([
        "train", str(cfg), "--stage", "head",
        "--from-checkpoint", str(out / "stage1.ckpt"),
    ]) == 0
    assert (out / "stage2.ckpt").exists()
    with open(out / "metrics_head.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(r["split"] == "train" for r in rows) == 2
    assert sum(r["split"] == "validation" for r in rows) == 2

    assert main(["eval", str(cfg), "--checkpoint", str(out / "stage2.ckpt")]) == 0
    payload = json.loads((out / "eval_validation.json").read_text())
    assert 0.0 <= payload["accuracy_top1"] <= 1.0
    assert payload["examples"] == 4
    assert payload["config_hash"]

    assert main(["train", str(cfg), "--stage", "ce"]) == 0
    assert (out / "ce.ckpt").exists()

    for what, which in (("isotropy", "h"), ("cosine", "z"), ("project", "h")):
        args = ["analyze", what, str(cfg), "--checkpoint", str(out / "stage1.ckpt"),
                "--which", which]
        if what == "cosine":
            args += ["--classes", "0", "1"]
        assert main(args) == 0

    iso = json.loads((out / "isotropy_h.json").read_text())
    assert 0.0 < iso["isotropy_score"] <= 1.0
    assert iso["candidate_count"] == 32
    assert iso["config_hash"]
    assert (out / "isotropy_h.png").exists()

    cos = json.loads((out / "cosine_0_1_z.json").read_text())
    assert -1.0 <= cos["negative_mean"] <= 1.0
    lines = (out / "cosine_0_1_z.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "bin_lo,bin_hi,positive_count,negative_count"
    counts = np.array([[int(v) for v in line.split(",")[2:]] for line in lines[2:]])
    assert counts[:, 0].sum() == cos["positive_pairs"]
    assert counts[:, 1].sum() == cos["negative_pairs"]
    assert (out / "cosine_0_1_z.png").exists()

    proj = (out / "projection_h.csv").read_text().splitlines()
    assert proj[1] == "x,y,label"
    assert len(proj) == 2 + 4  # comment + header + one row per val example
    assert (out / "projection_h.png").exists()


def test_eval_deterministic_output(workspace):
    tmp, cfg = workspace
    out = tmp / "out"
    assert main(["synth-data", str(cfg)]) == 0
    assert main(["train", str(cfg), "--stage", "ce"]) == 0
    assert main(["eval", str(cfg), "--checkpoint", str(out / "ce.ckpt")]) == 0
    first = (out / "eval_validation.json").read_bytes()
    assert main(["eval", str(cfg), "--checkpoint", str(out / "ce.ckpt")]) == 0
    assert (out / "eval_validation.json").read_bytes() == first


def test_workers_env_cap(workspace, monkeypatch):
    tmp, cfg = workspace
    monkeypatch.setenv("LACVIT_THREADS", "1")
    assert main(["synth-data", str(cfg), "--workers", "8"]) == 0


def test_z_from_headless_checkpoint_fails_cleanly(workspace):
    tmp, cfg = workspace
    out = tmp / "out"
    assert main(["synth-data", str(cfg)]) == 0
    assert main(["train", str(cfg), "--stage", "ce"]) == 0
    code = main(["analyze", "isotropy", str(cfg), "--checkpoint", str(out / "ce.ckpt"),
                 "--which", "z"])
    assert code != 0
