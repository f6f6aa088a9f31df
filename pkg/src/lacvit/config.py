"""Flat ``section.key = value`` run configuration.

One grammar for files and command-line overrides; unknown keys are hard
errors so typos never silently fall back to defaults.  The fully-resolved
config can be rendered back to canonical text, which is what gets echoed
into output directories and hashed for provenance.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .augment import AugmentationPolicy, stage2_policy
from .encoder import ViTConfig
from .errors import ConfigError
from .pipeline import TrainConfig

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_WORDS[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}") from None


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ConfigError(f"expected one of {options}, got {text!r}")
        return text

    return parse


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "run.seed": (int, 0),
    "run.out_dir": (str, "runs/out"),
    "run.workers": (int, 1),
    "data.kind": (_choice("synthetic", "cifar"), "synthetic"),
    "data.format": (_choice("cifar10", "cifar100"), "cifar10"),
    "data.train_path": (str, "runs/data/train.bin"),
    "data.val_path": (str, "runs/data/val.bin"),
    "data.num_classes": (int, 4),
    "data.per_class_train": (int, 100),
    "data.per_class_val": (int, 50),
    "data.image_size": (int, 32),
    "data.noise_sigma": (float, 0.05),
    "vit.patch_size": (int, 4),
    "vit.embed_dim": (int, 64),
    "vit.depth": (int, 4),
    "vit.heads": (int, 4),
    "vit.mlp_ratio": (float, 2.0),
    "vit.pooling": (_choice("mean", "cls"), "mean"),
    "vit.image_size": (int, 32),
    "aug1.crop_scale_lo": (float, 0.4),
    "aug1.crop_scale_hi": (float, 1.0),
    "aug1.rotation_lo_deg": (float, -30.0),
    "aug1.rotation_hi_deg": (float, 30.0),
    "aug1.color_jitter_strength": (float, 0.8),
    "aug1.blur_probability": (float, 0.5),
    "aug1.hflip_probability": (float, 0.5),
    "aug1.grayscale_probability": (float, 0.2),
    "aug2.crop_scale_lo": (float, 0.4),
    "aug2.crop_scale_hi": (float, 1.0),
    "aug2.rotation_lo_deg": (float, -30.0),
    "aug2.rotation_hi_deg": (float, 30.0),
    "aug2.hflip_probability": (float, 0.5),
    "stage1.epochs": (int, 60),
    "stage1.batch_size": (int, 64),
    "stage1.learning_rate": (float, 0.01),
    "stage1.weight_decay": (float, 1e-4),
    "stage1.momentum": (float, 0.9),
    "stage1.tau": (float, 0.1),
    "stage1.loss": (_choice("supcon", "ntxent", "npair"), "supcon"),
    "stage1.normalize": (_parse_bool, True),
    "stage1.cosine_decay": (_parse_bool, False),
    "stage2.epochs": (int, 30),
    "stage2.batch_size": (int, 64),
    "stage2.learning_rate": (float, 0.01),
    "stage2.weight_decay": (float, 1e-4),
    "stage2.momentum": (float, 0.9),
    "stage2.cosine_decay": (_parse_bool, False),
    "ce.epochs": (int, 90),
    "ce.batch_size": (int, 64),
    "ce.learning_rate": (float, 0.01),
    "ce.weight_decay": (float, 1e-4),
    "ce.momentum": (float, 0.9),
    "ce.cosine_decay": (_parse_bool, False),
}


class RunConfig:
    """Resolved configuration; values pre-parsed against the schema."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_text(cls, text: str, overrides: list[str] | None = None) -> "RunConfig":
        values = {key: default for key, (_, default) in SCHEMA.items()}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
            key, _, value = line.partition("=")
            _assign(values, key.strip(), value.strip(), f"line {lineno}")
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            key, _, value = item.partition("=")
            _assign(values, key.strip(), value.strip(), "command line")
        return cls(values)

    @classmethod
    def from_file(cls, path, overrides: list[str] | None = None) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_text(text, overrides)

    def canonical_text(self) -> str:
        lines = [f"{key} = {_render(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]

    def echo_to(self, directory, name: str) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        path.write_text(self.canonical_text())
        return path

    # -- typed views ---------------------------------------------------------

    def vit_config(self) -> ViTConfig:
        v = self.values
        return ViTConfig(
            patch_size=v["vit.patch_size"],
            embed_dim=v["vit.embed_dim"],
            depth=v["vit.depth"],
            heads=v["vit.heads"],
            mlp_ratio=v["vit.mlp_ratio"],
            pooling=v["vit.pooling"],
            image_size=v["vit.image_size"],
        )

    def stage1_policy(self) -> AugmentationPolicy:
        v = self.values
        return AugmentationPolicy(
            stage="one",
            crop_scale_range=(v["aug1.crop_scale_lo"], v["aug1.crop_scale_hi"]),
            rotation_range_deg=(v["aug1.rotation_lo_deg"], v["aug1.rotation_hi_deg"]),
            color_jitter_strength=v["aug1.color_jitter_strength"],
            blur_probability=v["aug1.blur_probability"],
            hflip_probability=v["aug1.hflip_probability"],
            grayscale_probability=v["aug1.grayscale_probability"],
        )

    def stage2_policy(self) -> AugmentationPolicy:
        v = self.values
        return stage2_policy(
            crop_scale_range=(v["aug2.crop_scale_lo"], v["aug2.crop_scale_hi"]),
            rotation_range_deg=(v["aug2.rotation_lo_deg"], v["aug2.rotation_hi_deg"]),
            hflip_probability=v["aug2.hflip_probability"],
        )

    def train_config(self, stage: str) -> TrainConfig:
        """Per-stage trainer settings; stage is contrastive | head | ce."""
        v = self.values
        section = {"contrastive": "stage1", "head": "stage2", "ce": "ce"}[stage]
        stage_name = {"contrastive": "contrastive", "head": "head", "ce": "ce_baseline"}[stage]
        policy = self.stage1_policy() if stage == "contrastive" else self.stage2_policy()
        return TrainConfig(
            stage=stage_name,
            epochs=v[f"{section}.epochs"],
            batch_size=v[f"{section}.batch_size"],
            learning_rate=v[f"{section}.learning_rate"],
            weight_decay=v[f"{section}.weight_decay"],
            momentum=v[f"{section}.momentum"],
            seed=v["run.seed"],
            vit=self.vit_config(),
            policy=policy,
            tau=v["stage1.tau"],
            loss_kind=v["stage1.loss"],
            normalize_embeddings=v["stage1.normalize"],
            cosine_decay=v[f"{section}.cosine_decay"],
            workers=v["run.workers"],
            out_dir=v["run.out_dir"],
            config_hash=self.config_hash(),
        )


def _assign(values: dict, key: str, text: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    parser, _ = SCHEMA[key]
    try:
        values[key] = parser(text)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from exc


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
