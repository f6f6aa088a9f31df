"""Projection head and the four training objectives.

Each loss is a fused graph node: the forward pass computes the scalar and
per-anchor contributions with max-subtracted log-sum-exps, and the backward
hook injects the analytic gradient with respect to the embedding matrix, from
where reverse mode continues into the head and encoder.

Label-aware contrastive loss over a batch of view embeddings z_i:

    L = sum_i (-1 / |P(i)|) * sum_{p in P(i)} log( exp(z_i . z_p / tau)
            / sum_{a != i} exp(z_i . z_a / tau) )

where P(i) holds every other view sharing anchor i's class label.  NT-Xent
restricts P(i) to the sibling view of the same image; the N-pair loss scores
one view per image against the partner views with unnormalized products.
Sums run over anchors as written; ``LossValue.per_anchor_mean`` additionally
exposes loss per anchor for cross-batch-size comparison (reporting only).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateInputError, ShapeError
from .rng import RngStream
from .tensor import Parameter, Tensor, accumulate, make_node

PROJECTION_DIM = 128


class ProjectionHead:
    """Two dense layers with a ReLU between: z = norm(W2 relu(W1 h + b1) + b2).

    Used only during contrastive training and discarded before the task head
    is fit.  Hidden width defaults to the input width; output width 128.
    """

    def __init__(self, params: dict[str, Parameter]):
        self.params = params

    @classmethod
    def init(
        cls,
        d_model: int,
        rng: RngStream,
        d_hidden: int | None = None,
        d_proj: int = PROJECTION_DIM,
    ) -> "ProjectionHead":
        d_hidden = d_model if d_hidden is None else d_hidden
        params = {
            "projection.w1": Parameter(
                rng.child("projection.w1").truncated_normal(0.02, (d_model, d_hidden)),
                "projection.w1",
            ),
            "projection.b1": Parameter(np.zeros(d_hidden), "projection.b1"),
            "projection.w2": Parameter(
                rng.child("projection.w2").truncated_normal(0.02, (d_hidden, d_proj)),
                "projection.w2",
            ),
            "projection.b2": Parameter(np.zeros(d_proj), "projection.b2"),
        }
        return cls(params)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def apply(self, h: Tensor, normalize: bool = True) -> Tensor:
        """Project representations; unit rows unless ``normalize`` is off."""
        p = self.params
        hidden = T.relu(T.add(T.matmul(h, p["projection.w1"]), p["projection.b1"]))
        z = T.add(T.matmul(hidden, p["projection.w2"]), p["projection.b2"])
        return T.l2_normalize_rows(z) if normalize else z


@dataclass
class ContrastiveBatch:
    """All view embeddings of one mini-batch plus their labels and sources."""

    z: Tensor
    labels: np.ndarray
    view_source: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.view_source = np.asarray(self.view_source, dtype=np.int64)
        m = self.z.shape[0]
        if self.z.ndim != 2:
            raise ShapeError(f"embeddings must be M x d, got {self.z.shape}")
        if len(self.labels) != m or len(self.view_source) != m:
            raise ShapeError("labels and view_source must match the embedding count")
        _, counts = np.unique(self.view_source, return_counts=True)
        if not (counts == 2).all():
            raise ContractError("every source image must contribute exactly two views")

    def __len__(self) -> int:
        return self.z.shape[0]

    def require_unit_rows(self, tol: float = 1e-9) -> None:
        norms = np.linalg.norm(self.z.data, axis=1)
        if np.abs(norms - 1.0).max() > tol:
            raise ContractError("contrastive embeddings must be unit-norm rows")

    def sibling_indices(self) -> np.ndarray:
        """For each view row, the row holding the other view of its image."""
        sib = np.empty(len(self), dtype=np.int64)
        for src in np.unique(self.view_source):
            a, b = np.nonzero(self.view_source == src)[0]
            sib[a], sib[b] = b, a
        return sib


@dataclass
class LossValue:
    scalar: float
    per_anchor: np.ndarray

    @property
    def per_anchor_mean(self) -> float:
        return self.scalar / len(self.per_anchor)


def _masked_row_lse(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row log-sum-exp excluding the diagonal, plus the row softmax weights."""
    masked = scores.copy()
    np.fill_diagonal(masked, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    expd = np.exp(masked - row_max)
    total = expd.sum(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(total[:, 0])
    return lse, expd / total


def supcon_loss(batch: ContrastiveBatch, tau: float) -> tuple[LossValue, Tensor]:
    """Label-aware contrastive loss: positives are all same-label views."""
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    batch.require_unit_rows()
    z = batch.z
    m = len(batch)
    pos = (batch.labels[:, None] == batch.labels[None, :]) & ~np.eye(m, dtype=bool)
    pos_counts = pos.sum(axis=1)
    if (pos_counts == 0).any():
        raise ContractError("every anchor needs at least one positive view")

    scores = z.data @ z.data.T / tau
    lse, soft = _masked_row_lse(scores)
    per_anchor = lse - (scores * pos).sum(axis=1) / pos_counts
    scalar = float(per_anchor.sum())

    grad_scores = soft - pos / pos_counts[:, None]
    np.fill_diagonal(grad_scores, 0.0)
    grad_z = (grad_scores + grad_scores.T) @ z.data / tau

    def bwd(g):
        accumulate(z, float(g) * grad_z)

    node = make_node(np.asarray(scalar), (z,), bwd)
    return LossValue(scalar=scalar, per_anchor=per_anchor), node


def ntxent_loss(batch: ContrastiveBatch, tau: float) -> tuple[LossValue, Tensor]:
    """Instance-discrimination contrast: the only positive is the sibling view."""
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    batch.require_unit_rows()
    z = batch.z
    m = len(batch)
    sib = batch.sibling_indices()

    scores = z.data @ z.data.T / tau
    lse, soft = _masked_row_lse(scores)
    per_anchor = lse - scores[np.arange(m), sib]
    scalar = float(per_anchor.sum())

    grad_scores = soft.copy()
    grad_scores[np.arange(m), sib] -= 1.0
    np.fill_diagonal(grad_scores, 0.0)
    grad_z = (grad_scores + grad_scores.T) @ z.data / tau

    def bwd(g):
        accumulate(z, float(g) * grad_z)

    node = make_node(np.asarray(scalar), (z,), bwd)
    return LossValue(scalar=scalar, per_anchor=per_anchor), node


def npair_loss(batch: ContrastiveBatch) -> tuple[LossValue, Tensor]:
    """N-pair loss over unnormalized projections.

    The first view of each image anchors against every image's second view:
    L_i = log(1 + sum_{k != i} exp(f_i . g_k - f_i . g_i)).
    """
    z = batch.z
    sources = np.unique(batch.view_source)
    n = len(sources)
    if n < 2:
        raise ContractError("n-pair loss needs at least two distinct images")
    anchor_rows = np.empty(n, dtype=np.int64)
    partner_rows = np.empty(n, dtype=np.int64)
    for i, src in enumerate(sources):
        a, b = np.nonzero(batch.view_source == src)[0]
        anchor_rows[i], partner_rows[i] = a, b

    f = z.data[anchor_rows]
    gmat = z.data[partner_rows]
    sims = f @ gmat.T
    deltas = sims - np.diag(sims)[:, None]
    np.fill_diagonal(deltas, -np.inf)  # exp(-inf) contributes 0
    row_max = np.maximum(0.0, deltas.max(axis=1))
    expd = np.exp(deltas - row_max[:, None])
    per_anchor = row_max + np.log(np.exp(-row_max) + expd.sum(axis=1))
    scalar = float(per_anchor.sum())

    # sigma_ik = exp(d_ik) / (1 + sum_k' exp(d_ik')); zero on the diagonal.
    sigma = np.exp(deltas - per_anchor[:, None])
    totals = sigma.sum(axis=1, keepdims=True)
    grad_z = np.zeros_like(z.data)
    grad_z[anchor_rows] = sigma @ gmat - totals * gmat
    grad_z[partner_rows] = sigma.T @ f - totals * f

    def bwd(g):
        accumulate(z, float(g) * grad_z)

    node = make_node(np.asarray(scalar), (z,), bwd)
    return LossValue(scalar=scalar, per_anchor=per_anchor), node


def cross_entropy(logits: Tensor, labels) -> tuple[LossValue, Tensor]:
    """Mean of -log softmax(logits)[label] with stable log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be B x K, got {logits.shape}")
    b, k = logits.shape
    if len(labels) != b:
        raise ShapeError("labels must match the batch size")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in [0, {k})")

    row_max = logits.data.max(axis=1, keepdims=True)
    expd = np.exp(logits.data - row_max)
    lse = row_max[:, 0] + np.log(expd.sum(axis=1))
    per_example = lse - logits.data[np.arange(b), labels]
    scalar = float(per_example.mean())

    soft = expd / expd.sum(axis=1, keepdims=True)
    grad = soft
    grad[np.arange(b), labels] -= 1.0
    grad /= b

    def bwd(g):
        accumulate(logits, float(g) * grad)

    node = make_node(np.asarray(scalar), (logits,), bwd)
    return LossValue(scalar=scalar, per_anchor=per_example / b), node
