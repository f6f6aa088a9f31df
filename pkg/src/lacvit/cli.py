"""Command-line entry point.

Subcommands: ``synth-data``, ``train --stage {contrastive|head|ce}``,
``eval``, and ``analyze {isotropy|cosine|project}``.  Every command reads a
flat ``section.key = value`` config file, applies ``--set`` overrides, echoes
the fully-resolved config into the output directory, and derives all
randomness from ``run.seed``.  Report-producing commands write matplotlib
figures alongside their CSV/JSON outputs.

Exit codes: 0 success, 2 config error, 3 data-format error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    accuracy_top1,
    cosine_report,
    extract_embeddings,
    isotropy_score,
    pick_two_classes,
    project_2d,
)
from .config import RunConfig
from .data import gen_synthetic, load_cifar_binary, save_cifar_binary
from .errors import (
    ConfigError,
    ContractError,
    DataFormatError,
    DegenerateInputError,
    NumericalAbort,
)
from .pipeline import load_checkpoint, train_ce_baseline, train_stage1, train_stage2

WORKERS_ENV = "LACVIT_THREADS"


def _capped_workers(requested: int) -> int:
    cap = os.environ.get(WORKERS_ENV)
    if cap is not None:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {cap!r}") from None
    return max(1, requested)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config, args.set or [])
    if args.workers is not None:
        cfg.values["run.workers"] = args.workers
    cfg.values["run.workers"] = _capped_workers(cfg.values["run.workers"])
    return cfg


def _load_split(cfg: RunConfig, split: str):
    key = "data.train_path" if split == "train" else "data.val_path"
    path = cfg[key]
    if not Path(path).exists():
        raise ConfigError(
            f"dataset file {path} not found; run `lacvit synth-data` first "
            f"or point {key} at an existing file"
        )
    label_bytes = 2 if cfg["data.format"] == "cifar100" else 1
    ds = load_cifar_binary(path, cfg["data.num_classes"], label_bytes=label_bytes)
    ds.split = "train" if split == "train" else "validation"
    return ds


def _write_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth_data(args) -> int:
    cfg = _load_config(args)
    if cfg["data.kind"] != "synthetic":
        raise ConfigError("synth-data requires data.kind = synthetic")
    out_dir = Path(cfg["run.out_dir"])
    cfg.echo_to(out_dir, "config_synth-data.cfg")
    label_bytes = 2 if cfg["data.format"] == "cifar100" else 1
    specs = [
        ("train", cfg["data.train_path"], cfg["data.per_class_train"]),
        ("validation", cfg["data.val_path"], cfg["data.per_class_val"]),
    ]
    for split, path, per_class in specs:
        ds = gen_synthetic(
            num_classes=cfg["data.num_classes"],
            per_class=per_class,
            size=cfg["data.image_size"],
            noise_sigma=cfg["data.noise_sigma"],
            seed=cfg["run.seed"],
            split=split,
        )
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        save_cifar_binary(ds, path, label_bytes=label_bytes)
        print(f"wrote {len(ds)} examples to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg["run.out_dir"])
    stage = args.stage
    cfg.echo_to(out_dir, f"config_train_{stage}.cfg")
    train_cfg = cfg.train_config(stage)
    train_ds = _load_split(cfg, "train")

    ckpt = out_dir / {"contrastive": "stage1.ckpt", "head": "stage2.ckpt", "ce": "ce.ckpt"}[stage]
    metrics = out_dir / f"metrics_{stage}.csv"
    digest_path = out_dir / f"view_digest_{stage}.txt" if args.view_digest else None

    if stage == "contrastive":
        train_stage1(train_cfg, train_ds, ckpt, metrics, view_digest_path=digest_path)
    elif stage == "head":
        if not args.from_checkpoint:
            raise ConfigError("train --stage head requires --from-checkpoint")
        val_ds = _load_split(cfg, "val")
        train_stage2(train_cfg, args.from_checkpoint, train_ds, val_ds, ckpt, metrics)
    else:
        val_ds = _load_split(cfg, "val")
        train_ce_baseline(train_cfg, train_ds, val_ds, ckpt, metrics)

    from .figures import loss_curve_figure

    with open(metrics, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows:
        loss_curve_figure(rows, out_dir / f"loss_{stage}.png", title=f"{stage} training")
    print(f"checkpoint: {ckpt}")
    print(f"metrics:    {metrics}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg["run.out_dir"])
    cfg.echo_to(out_dir, "config_eval.cfg")
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    dataset = _load_split(cfg, args.split)
    acc = accuracy_top1(args.checkpoint, dataset)
    _, metadata = load_checkpoint(args.checkpoint)
    payload = {
        "accuracy_top1": acc,
        "examples": len(dataset),
        "split": dataset.split,
        "checkpoint": str(args.checkpoint),
        "config_hash": metadata.get("config_hash", ""),
    }
    path = out_dir / f"eval_{dataset.split}.json"
    _write_json(payload, path)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _csv_with_hash(path: Path, header: list[str], rows, config_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_analyze(args) -> int:
    from . import figures

    cfg = _load_config(args)
    out_dir = Path(cfg["run.out_dir"])
    cfg.echo_to(out_dir, f"config_analyze_{args.what}.cfg")
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    _, metadata = load_checkpoint(args.checkpoint)
    config_hash = metadata.get("config_hash", "")
    dataset = _load_split(cfg, args.split)
    emb = extract_embeddings(args.checkpoint, dataset, which=args.which)

    if args.what == "isotropy":
        report = isotropy_score(emb)
        payload = {
            "isotropy_score": report.score,
            "candidate_count": report.candidate_count,
            "f_values": report.f_values.tolist(),
            "which": args.which,
            "source": emb.source,
            "config_hash": config_hash,
        }
        _write_json(payload, out_dir / f"isotropy_{args.which}.json")
        figures.isotropy_figure(
            report, out_dir / f"isotropy_{args.which}.png", title=f"isotropy ({args.which})"
        )
        print(f"isotropy score ({args.which}): {report.score:.6f}")

    elif args.what == "cosine":
        if args.classes:
            class_a, class_b = args.classes
        else:
            class_a, class_b = pick_two_classes(emb, cfg["run.seed"])
        report = cosine_report(emb, class_a, class_b, seed=cfg["run.seed"])
        stem = f"cosine_{class_a}_{class_b}_{args.which}"
        payload = {
            "class_a": class_a,
            "class_b": class_b,
            "positive_mean": report.positive_mean,
            "negative_mean": report.negative_mean,
            "separation": report.positive_mean - report.negative_mean,
            "positive_pairs": report.positive_count,
            "negative_pairs": report.negative_count,
            "which": args.which,
            "source": emb.source,
            "config_hash": config_hash,
        }
        _write_json(payload, out_dir / f"{stem}.json")
        edges = np.linspace(-1.0, 1.0, len(report.positive_hist) + 1)
        rows = [
            (f"{edges[i]:.4f}", f"{edges[i + 1]:.4f}", int(report.positive_hist[i]), int(report.negative_hist[i]))
            for i in range(len(report.positive_hist))
        ]
        _csv_with_hash(
            out_dir / f"{stem}.csv",
            ["bin_lo", "bin_hi", "positive_count", "negative_count"],
            rows,
            config_hash,
        )
        figures.cosine_figure(
            report,
            out_dir / f"{stem}.png",
            title=f"classes {class_a} vs {class_b} ({args.which})",
        )
        print(
            f"positive mean {report.positive_mean:.4f}, "
            f"negative mean {report.negative_mean:.4f}"
        )

    else:  # project
        coords = project_2d(emb)
        rows = [
            (f"{coords[i, 0]:.10f}", f"{coords[i, 1]:.10f}", int(emb.labels[i]))
            for i in range(coords.shape[0])
        ]
        _csv_with_hash(
            out_dir / f"projection_{args.which}.csv", ["x", "y", "label"], rows, config_hash
        )
        figures.projection_figure(
            coords,
            emb.labels,
            out_dir / f"projection_{args.which}.png",
            title=f"2-D projection ({args.which})",
        )
        print(f"projected {coords.shape[0]} embeddings")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lacvit",
        description="Two-stage label-aware contrastive training laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="flat section.key = value config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--workers", type=int, default=None, help="augmentation workers")

    p = sub.add_parser("synth-data", help="generate synthetic datasets in CIFAR layout")
    common(p)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--stage", required=True, choices=["contrastive", "head", "ce"])
    p.add_argument("--from-checkpoint", help="stage-1 checkpoint (required for --stage head)")
    p.add_argument(
        "--view-digest",
        action="store_true",
        help="write a SHA-256 digest of every augmented view (determinism checks)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val"], default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="embedding-geometry reports and figures")
    p.add_argument("what", choices=["isotropy", "cosine", "project"])
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=["h", "z"], default="h")
    p.add_argument("--split", choices=["train", "val"], default="val")
    p.add_argument(
        "--classes",
        type=int,
        nargs=2,
        metavar=("A", "B"),
        help="the two classes for the cosine report (default: seeded pick)",
    )
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except (NumericalAbort, DegenerateInputError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
