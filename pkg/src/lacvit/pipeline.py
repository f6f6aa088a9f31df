"""Two-stage training, the cross-entropy baseline, SGD, and checkpoints.

Stage 1 trains encoder plus projection head with a contrastive objective on
two views per image.  Stage 2 freezes the encoder, discards the projection
head, and fits a linear task head with cross-entropy on single views.  The
baseline trains encoder and task head jointly with cross-entropy (nothing
frozen).  All randomness derives from one seed; runs are reproducible
byte-for-byte in single-threaded mode.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import (
    AugmentationPolicy,
    single_views_for_batch,
    view_pairs_for_batch,
)
from .data import ImageDataset, batches, patchify_batch
from .encoder import ViTConfig, ViTEncoder
from .errors import ConfigError, DataFormatError, NumericalAbort
from .losses import (
    ContrastiveBatch,
    ProjectionHead,
    cross_entropy,
    npair_loss,
    ntxent_loss,
    supcon_loss,
)
from .rng import RngStream
from .tensor import Parameter, Tensor, backward, no_grad

CHECKPOINT_MAGIC = b"LCVT"
CHECKPOINT_VERSION = 1
METRICS_COLUMNS = ["epoch", "split", "loss", "accuracy", "seconds"]


@dataclass
class TrainConfig:
    stage: str  # contrastive | head | ce_baseline
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float
    momentum: float
    seed: int
    vit: ViTConfig
    policy: AugmentationPolicy
    tau: float = 0.1
    loss_kind: str = "supcon"  # supcon | ntxent | npair
    normalize_embeddings: bool = True
    cosine_decay: bool = False
    workers: int = 1
    out_dir: str = "runs/out"
    config_hash: str = ""

    def __post_init__(self):
        if self.stage not in ("contrastive", "head", "ce_baseline"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must lie in [0, 1)")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.loss_kind not in ("supcon", "ntxent", "npair"):
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")


class SGD:
    """Momentum SGD with decoupled-from-nothing weight decay (g + wd * w)."""

    def __init__(self, params: list[Parameter], lr: float, weight_decay: float, momentum: float):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.velocity = {p.name: np.zeros_like(p.data) for p in params}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for p in self.params:
            if not p.frozen:
                v = self.velocity[p.name]
                v *= self.momentum
                v += p.grad + self.weight_decay * p.data
                p.data -= lr * v
            p.grad[:] = 0.0


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(1, total_epochs)))


# ---------------------------------------------------------------------------
# checkpoint format


def save_checkpoint(params: dict[str, np.ndarray], metadata: dict[str, str], path) -> None:
    """Binary layout: magic, version, tensor records, length-prefixed metadata.

    Written atomically (temp file + rename) so a crashed run never leaves a
    half-checkpoint behind.
    """
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(params))
    for name, value in params.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    meta_text = "".join(f"{k}={v}\n" for k, v in metadata.items()).encode("utf-8")
    blob += struct.pack("<I", len(meta_text))
    blob += meta_text
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(blob))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Parse a checkpoint; any structural problem names the byte offset."""
    raw = Path(path).read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise DataFormatError(
                f"{path}: truncated while reading {what} at byte {offset}"
            )
        piece = raw[offset : offset + n]
        offset += n
        return piece

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic at byte 0")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version} at byte 4")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims)) if rank else 1
        payload = take(4 * size, f"payload of {name}")
        params[name] = (
            np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
        )
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    meta_text = take(meta_len, "metadata").decode("utf-8")
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes at {offset}")
    metadata = {}
    for line in meta_text.splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    return params, metadata


def _model_metadata(config: TrainConfig, num_classes: int, epoch: int) -> dict[str, str]:
    vit = config.vit
    return {
        "stage": config.stage,
        "epoch": str(epoch),
        "config_hash": config.config_hash,
        "seed": str(config.seed),
        "num_classes": str(num_classes),
        "loss_kind": config.loss_kind,
        "normalize_embeddings": str(config.normalize_embeddings).lower(),
        "vit.patch_size": str(vit.patch_size),
        "vit.embed_dim": str(vit.embed_dim),
        "vit.depth": str(vit.depth),
        "vit.heads": str(vit.heads),
        "vit.mlp_ratio": repr(vit.mlp_ratio),
        "vit.pooling": vit.pooling,
        "vit.image_size": str(vit.image_size),
    }


def vit_config_from_metadata(metadata: dict[str, str]) -> ViTConfig:
    return ViTConfig(
        patch_size=int(metadata["vit.patch_size"]),
        embed_dim=int(metadata["vit.embed_dim"]),
        depth=int(metadata["vit.depth"]),
        heads=int(metadata["vit.heads"]),
        mlp_ratio=float(metadata["vit.mlp_ratio"]),
        pooling=metadata["vit.pooling"],
        image_size=int(metadata["vit.image_size"]),
    )


def rebuild_encoder(params: dict[str, np.ndarray], metadata: dict[str, str]) -> ViTEncoder:
    """Reconstruct an encoder (geometry from metadata, weights from records)."""
    cfg = vit_config_from_metadata(metadata)
    encoder = ViTEncoder.init(cfg, RngStream(0, 0))
    for name, param in encoder.params.items():
        if name not in params:
            raise DataFormatError(f"checkpoint is missing tensor {name}")
        if params[name].shape != param.data.shape:
            raise DataFormatError(
                f"checkpoint tensor {name} has shape {params[name].shape}, "
                f"expected {param.data.shape}"
            )
        param.data[...] = params[name]
    return encoder


# ---------------------------------------------------------------------------
# metrics log


class MetricsLog:
    """CSV rows (epoch, split, loss, accuracy, seconds), one file per run."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRICS_COLUMNS)

    def row(self, epoch: int, split: str, loss: float, accuracy, seconds: float) -> None:
        acc = "" if accuracy is None else f"{accuracy:.6f}"
        self._writer.writerow([epoch, split, f"{loss:.10f}", acc, f"{seconds:.3f}"])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


# ---------------------------------------------------------------------------
# shared forward helpers


def _classifier_init(d_model: int, num_classes: int, rng: RngStream) -> dict[str, Parameter]:
    return {
        "classifier.weight": Parameter(
            rng.child("classifier.weight").truncated_normal(0.02, (d_model, num_classes)),
            "classifier.weight",
        ),
        "classifier.bias": Parameter(np.zeros(num_classes), "classifier.bias"),
    }


def _logits(h: Tensor, classifier: dict[str, Parameter]) -> Tensor:
    return T.add(T.matmul(h, classifier["classifier.weight"]), classifier["classifier.bias"])


def evaluate_model(
    encoder: ViTEncoder,
    classifier: dict[str, Parameter],
    dataset: ImageDataset,
    batch_size: int = 128,
) -> tuple[float, float]:
    """Deterministic (mean CE loss, top-1 accuracy): no augmentation, ties to
    the lowest class index."""
    correct = 0
    loss_sum = 0.0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            examples = dataset.examples[start : start + batch_size]
            pixels = np.stack([ex.pixels for ex in examples])
            patches = patchify_batch(pixels, encoder.config.patch_size)
            h = encoder.forward(patches)
            logits = _logits(h, classifier)
            labels = np.array([ex.label for ex in examples])
            value, _ = cross_entropy(logits, labels)
            loss_sum += value.scalar * len(examples)
            pred = logits.data.argmax(axis=1)  # argmax takes the lowest index on ties
            correct += int((pred == labels).sum())
    return loss_sum / len(dataset), correct / len(dataset)


def evaluate_accuracy(
    encoder: ViTEncoder,
    classifier: dict[str, Parameter],
    dataset: ImageDataset,
    batch_size: int = 128,
) -> float:
    return evaluate_model(encoder, classifier, dataset, batch_size)[1]


def _check_finite(loss_scalar: float, stage: str, epoch: int, batch_idx: int, kind: str):
    if not math.isfinite(loss_scalar):
        raise NumericalAbort(
            f"non-finite loss in {stage} at epoch {epoch}, batch {batch_idx} "
            f"(loss kind {kind}): {loss_scalar}"
        )


class _ViewDigest:
    """SHA-256 over augmented view bytes in deterministic batch order."""

    def __init__(self):
        self._hash = hashlib.sha256()

    def update(self, views: np.ndarray) -> None:
        self._hash.update(np.ascontiguousarray(views, dtype=np.float64).tobytes())

    def hexdigest(self) -> str:
        return self._hash.hexdigest()


CONTRASTIVE_LOSSES = {
    "supcon": lambda batch, tau: supcon_loss(batch, tau),
    "ntxent": lambda batch, tau: ntxent_loss(batch, tau),
    "npair": lambda batch, tau: npair_loss(batch),
}


# ---------------------------------------------------------------------------
# trainers


def train_stage1(
    config: TrainConfig,
    dataset: ImageDataset,
    ckpt_path,
    metrics_path,
    view_digest_path=None,
) -> Path:
    """Contrastive stage: two views per image; trains encoder and projection."""
    if config.batch_size < 2:
        raise ConfigError("contrastive stage requires batch_size >= 2")
    if config.loss_kind == "npair" and len(dataset) % config.batch_size == 1:
        raise ConfigError(
            "npair loss cannot score a trailing batch of one image; "
            "choose a batch size with a remainder other than 1"
        )
    root = RngStream(config.seed, 0)
    encoder = ViTEncoder.init(config.vit, root.child("init", "encoder"))
    head = ProjectionHead.init(config.vit.embed_dim, root.child("init", "projection"))
    params = encoder.parameters() + head.parameters()
    opt = SGD(params, config.learning_rate, config.weight_decay, config.momentum)
    log = MetricsLog(metrics_path)
    digest = _ViewDigest() if view_digest_path else None
    loss_fn = CONTRASTIVE_LOSSES[config.loss_kind]
    start_time = time.perf_counter()

    try:
        for epoch in range(config.epochs):
            lr = (
                cosine_lr(config.learning_rate, epoch, config.epochs)
                if config.cosine_decay
                else config.learning_rate
            )
            aug_stream = root.child("augment", epoch)
            shuffle_stream = root.child("shuffle", epoch)
            total_loss = 0.0
            total_anchors = 0
            for batch_idx, batch in enumerate(
                batches(dataset, config.batch_size, shuffle_stream, contrastive=True)
            ):
                examples = [dataset.examples[i] for i in batch.indices]
                pairs = view_pairs_for_batch(
                    examples, batch.indices, config.policy, aug_stream, config.workers
                )
                views = np.stack(
                    [v for pair in pairs for v in (pair.view_a, pair.view_b)]
                )
                if digest is not None:
                    digest.update(views)
                patches = patchify_batch(views, config.vit.patch_size)
                h = encoder.forward(patches)
                z = head.apply(h, normalize=config.normalize_embeddings)
                cbatch = ContrastiveBatch(
                    z=z,
                    labels=np.repeat(batch.labels, 2),
                    view_source=np.repeat(batch.indices, 2),
                )
                value, node = loss_fn(cbatch, config.tau)
                _check_finite(value.scalar, "stage1", epoch, batch_idx, config.loss_kind)
                backward(node)
                opt.step(lr)
                total_loss += value.scalar
                total_anchors += len(value.per_anchor)
            log.row(
                epoch,
                "train",
                total_loss / max(1, total_anchors),
                None,
                time.perf_counter() - start_time,
            )
    finally:
        log.close()

    weights = {p.name: p.data for p in params}
    save_checkpoint(
        weights, _model_metadata(config, dataset.num_classes, config.epochs), ckpt_path
    )
    if view_digest_path:
        Path(view_digest_path).write_text(digest.hexdigest() + "\n")
    return Path(ckpt_path)


def _train_classifier_epochs(
    config: TrainConfig,
    encoder: ViTEncoder,
    classifier: dict[str, Parameter],
    train_params: list[Parameter],
    dataset: ImageDataset,
    val_dataset: ImageDataset | None,
    root: RngStream,
    log: MetricsLog,
    encoder_detached: bool,
) -> None:
    """Shared single-view cross-entropy loop for stage 2 and the CE baseline."""
    opt = SGD(train_params, config.learning_rate, config.weight_decay, config.momentum)
    start_time = time.perf_counter()
    for epoch in range(config.epochs):
        lr = (
            cosine_lr(config.learning_rate, epoch, config.epochs)
            if config.cosine_decay
            else config.learning_rate
        )
        aug_stream = root.child("augment", epoch)
        shuffle_stream = root.child("shuffle", epoch)
        total_loss = 0.0
        total_examples = 0
        total_correct = 0
        for batch_idx, batch in enumerate(
            batches(dataset, config.batch_size, shuffle_stream)
        ):
            examples = [dataset.examples[i] for i in batch.indices]
            views = single_views_for_batch(
                examples, batch.indices, config.policy, aug_stream, config.workers
            )
            patches = patchify_batch(views, config.vit.patch_size)
            if encoder_detached:
                with no_grad():
                    h = encoder.forward(patches).detach()
            else:
                h = encoder.forward(patches)
            logits = _logits(h, classifier)
            value, node = cross_entropy(logits, batch.labels)
            _check_finite(value.scalar, config.stage, epoch, batch_idx, "cross_entropy")
            backward(node)
            opt.step(lr)
            total_loss += value.scalar * len(batch)
            total_examples += len(batch)
            total_correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
        log.row(
            epoch,
            "train",
            total_loss / total_examples,
            total_correct / total_examples,
            time.perf_counter() - start_time,
        )
        if val_dataset is not None:
            val_loss, val_acc = evaluate_model(encoder, classifier, val_dataset)
            log.row(epoch, "validation", val_loss, val_acc, time.perf_counter() - start_time)


def train_stage2(
    config: TrainConfig,
    stage1_ckpt_path,
    dataset: ImageDataset,
    val_dataset: ImageDataset | None,
    ckpt_path,
    metrics_path,
) -> Path:
    """Task-head stage: frozen encoder, projection discarded, linear head + CE."""
    weights, metadata = load_checkpoint(stage1_ckpt_path)
    meta_classes = int(metadata.get("num_classes", dataset.num_classes))
    if meta_classes != dataset.num_classes:
        raise ConfigError(
            f"checkpoint was trained against {meta_classes} classes, "
            f"dataset has {dataset.num_classes}"
        )
    encoder = rebuild_encoder(weights, metadata)
    encoder.freeze()
    root = RngStream(config.seed, 0)
    classifier = _classifier_init(
        encoder.config.embed_dim, dataset.num_classes, root.child("init", "classifier")
    )
    log = MetricsLog(metrics_path)
    try:
        _train_classifier_epochs(
            config,
            encoder,
            classifier,
            list(classifier.values()),
            dataset,
            val_dataset,
            root,
            log,
            encoder_detached=True,
        )
    finally:
        log.close()
    out = {p.name: p.data for p in encoder.parameters()}
    out.update({p.name: p.data for p in classifier.values()})
    save_checkpoint(out, _model_metadata(config, dataset.num_classes, config.epochs), ckpt_path)
    return Path(ckpt_path)


def train_ce_baseline(
    config: TrainConfig,
    dataset: ImageDataset,
    val_dataset: ImageDataset | None,
    ckpt_path,
    metrics_path,
) -> Path:
    """Vanilla comparator: encoder + linear head trained jointly, nothing frozen."""
    root = RngStream(config.seed, 0)
    encoder = ViTEncoder.init(config.vit, root.child("init", "encoder"))
    classifier = _classifier_init(
        config.vit.embed_dim, dataset.num_classes, root.child("init", "classifier")
    )
    params = encoder.parameters() + list(classifier.values())
    log = MetricsLog(metrics_path)
    try:
        _train_classifier_epochs(
            config,
            encoder,
            classifier,
            params,
            dataset,
            val_dataset,
            root,
            log,
            encoder_detached=False,
        )
    finally:
        log.close()
    out = {p.name: p.data for p in params}
    save_checkpoint(out, _model_metadata(config, dataset.num_classes, config.epochs), ckpt_path)
    return Path(ckpt_path)
