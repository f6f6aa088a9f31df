"""Embedding-geometry diagnostics: isotropy, cosine separation, 2-D maps.

The isotropy score of a vector set V evaluates F(c) = sum_i exp(c . v_i)
over the candidate directions C = {+/- u_k}, where u_k are the eigenvectors
of V^T V, and reports min F / max F.  A perfectly isotropic set scores 1;
a set concentrated along one direction scores near 0.  Including both signs
of each eigenvector removes the sign ambiguity of eigendecomposition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import ImageDataset, patchify_batch
from .errors import ContractError, DegenerateInputError
from .linalg import pca_project, sym_eig
from .losses import ProjectionHead
from .pipeline import (
    evaluate_model,
    load_checkpoint,
    rebuild_encoder,
)
from .rng import RngStream
from .tensor import Parameter, Tensor, no_grad

HIST_BINS = 50
MAX_EXACT_PAIRS = 1_000_000


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # N x d
    labels: np.ndarray  # N
    source: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise ContractError(f"need an N x d matrix with N >= 2, got {self.vectors.shape}")
        if len(self.labels) != self.vectors.shape[0]:
            raise ContractError("labels must match the number of vectors")


@dataclass
class IsotropyReport:
    score: float
    f_values: np.ndarray  # 2d values: F(+u_k) then F(-u_k)
    candidate_count: int


@dataclass
class CosineReport:
    positive_mean: float
    negative_mean: float
    positive_hist: np.ndarray  # HIST_BINS counts over [-1, 1]
    negative_hist: np.ndarray
    positive_count: int
    negative_count: int


# ---------------------------------------------------------------------------
# embedding extraction


def extract_embeddings(
    checkpoint_path, dataset: ImageDataset, which: str = "h", batch_size: int = 128
) -> EmbeddingSet:
    """Deterministic forward over the raw dataset (no augmentation).

    ``which='h'`` returns pooled encoder outputs; ``which='z'`` additionally
    applies the stage-1 projection head, which only exists in contrastive
    checkpoints.
    """
    if which not in ("h", "z"):
        raise ContractError(f"which must be 'h' or 'z', got {which!r}")
    weights, metadata = load_checkpoint(checkpoint_path)
    encoder = rebuild_encoder(weights, metadata)
    head = None
    if which == "z":
        if "projection.w1" not in weights:
            raise ContractError(
                "checkpoint has no projection head; z embeddings require a "
                "stage-1 (contrastive) checkpoint"
            )
        head = ProjectionHead.init(encoder.config.embed_dim, RngStream(0, 0))
        for name, param in head.params.items():
            param.data[...] = weights[name]
    normalize = metadata.get("normalize_embeddings", "true") == "true"

    rows = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            examples = dataset.examples[start : start + batch_size]
            pixels = np.stack([ex.pixels for ex in examples])
            patches = patchify_batch(pixels, encoder.config.patch_size)
            h = encoder.forward(patches)
            rows.append(head.apply(h, normalize=normalize).data if head else h.data)
    return EmbeddingSet(
        vectors=np.concatenate(rows, axis=0),
        labels=dataset.labels(),
        source=f"{metadata.get('stage', '?')}:{which}:{dataset.split}",
    )


# ---------------------------------------------------------------------------
# isotropy


def isotropy_score(embeddings: EmbeddingSet) -> IsotropyReport:
    """min/max of F(c) over the +/- eigenvector candidates of V^T V."""
    v = embeddings.vectors
    n, d = v.shape
    if not np.any(v):
        raise DegenerateInputError("isotropy score is undefined for all-zero vectors")
    if n < d:
        warnings.warn(
            f"isotropy: only {n} vectors in {d} dimensions; V^T V is rank-deficient",
            stacklevel=2,
        )
    # Canonical row order makes the score exactly invariant under row
    # permutation (float sums would otherwise differ in the last ulp).
    v = v[np.lexsort(v.T[::-1])]
    eig = sym_eig(v.T @ v)
    projections = v @ eig.eigenvectors  # N x d, column k = <v_i, u_k>
    f_plus = np.exp(projections).sum(axis=0)
    f_minus = np.exp(-projections).sum(axis=0)
    f_values = np.concatenate([f_plus, f_minus])
    return IsotropyReport(
        score=float(f_values.min() / f_values.max()),
        f_values=f_values,
        candidate_count=2 * d,
    )


# ---------------------------------------------------------------------------
# cosine separation


def _pair_values(unit: np.ndarray, rows_a, rows_b, same: bool):
    """Cosines for all pairs (a, b); within-group pairs are unordered."""
    if same:
        sims = unit[rows_a] @ unit[rows_a].T
        iu = np.triu_indices(len(rows_a), k=1)
        return sims[iu]
    return (unit[rows_a] @ unit[rows_b].T).reshape(-1)


def _maybe_sample(values: np.ndarray, max_pairs: int, rng: RngStream) -> np.ndarray:
    if len(values) <= max_pairs:
        return values
    # Seeded reservoir over the enumeration order.
    keep = values[:max_pairs].copy()
    for i in range(max_pairs, len(values)):
        j = rng.integer(i + 1)
        if j < max_pairs:
            keep[j] = values[i]
    return keep


def cosine_report(
    embeddings: EmbeddingSet,
    class_a: int,
    class_b: int,
    max_pairs: int = MAX_EXACT_PAIRS,
    seed: int = 0,
) -> CosineReport:
    """Same-class vs cross-class cosine distributions for two classes.

    Positive pairs are all unordered same-class pairs within either class;
    negative pairs cross the two classes.  Enumeration is exact up to
    ``max_pairs`` per side, reservoir-sampled (seeded) beyond.
    """
    if class_a == class_b:
        raise ContractError("choose two distinct classes")
    rows = {}
    for cls in (class_a, class_b):
        members = np.nonzero(embeddings.labels == cls)[0]
        if len(members) < 2:
            raise ContractError(f"class {cls} needs at least 2 members, has {len(members)}")
        rows[cls] = members

    norms = np.linalg.norm(embeddings.vectors, axis=1, keepdims=True)
    if (norms < 1e-300).any():
        raise DegenerateInputError("cosine is undefined for zero vectors")
    unit = embeddings.vectors / norms

    positives = np.concatenate(
        [
            _pair_values(unit, rows[class_a], None, same=True),
            _pair_values(unit, rows[class_b], None, same=True),
        ]
    )
    negatives = _pair_values(unit, rows[class_a], rows[class_b], same=False)
    rng = RngStream(seed, 0)
    positives = _maybe_sample(positives, max_pairs, rng.child("positives"))
    negatives = _maybe_sample(negatives, max_pairs, rng.child("negatives"))
    positives = np.clip(positives, -1.0, 1.0)
    negatives = np.clip(negatives, -1.0, 1.0)

    pos_hist, _ = np.histogram(positives, bins=HIST_BINS, range=(-1.0, 1.0))
    neg_hist, _ = np.histogram(negatives, bins=HIST_BINS, range=(-1.0, 1.0))
    return CosineReport(
        positive_mean=float(positives.mean()),
        negative_mean=float(negatives.mean()),
        positive_hist=pos_hist,
        negative_hist=neg_hist,
        positive_count=len(positives),
        negative_count=len(negatives),
    )


def pick_two_classes(embeddings: EmbeddingSet, seed: int) -> tuple[int, int]:
    """Seeded convenience pick of two distinct classes that are present."""
    present = np.unique(embeddings.labels)
    if len(present) < 2:
        raise ContractError("need at least two classes present")
    rng = RngStream(seed, 0).child("class-pick")
    i = rng.integer(len(present))
    j = rng.integer(len(present) - 1)
    if j >= i:
        j += 1
    return int(present[i]), int(present[j])


# ---------------------------------------------------------------------------
# 2-D projection and accuracy


def project_2d(embeddings: EmbeddingSet) -> np.ndarray:
    """PCA onto the top two principal axes; deterministic coordinates."""
    if embeddings.vectors.shape[0] < 3:
        raise ContractError("2-D projection needs at least 3 vectors")
    return pca_project(embeddings.vectors, 2)


def top1_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction correct; argmax ties resolve to the lowest class index."""
    pred = np.asarray(logits).argmax(axis=1)
    return float((pred == np.asarray(labels)).mean())


def accuracy_top1(checkpoint_path, dataset: ImageDataset, batch_size: int = 128) -> float:
    """Validation-style top-1 accuracy of a checkpoint with a task head."""
    weights, metadata = load_checkpoint(checkpoint_path)
    if "classifier.weight" not in weights:
        raise ContractError("checkpoint has no task head; train stage 'head' or 'ce' first")
    meta_classes = int(metadata.get("num_classes", dataset.num_classes))
    if meta_classes != dataset.num_classes:
        raise ContractError(
            f"checkpoint expects {meta_classes} classes, dataset has {dataset.num_classes}"
        )
    encoder = rebuild_encoder(weights, metadata)
    classifier = {
        "classifier.weight": Parameter(weights["classifier.weight"], "classifier.weight"),
        "classifier.bias": Parameter(weights["classifier.bias"], "classifier.bias"),
    }
    return evaluate_model(encoder, classifier, dataset, batch_size)[1]
