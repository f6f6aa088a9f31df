"""Label-aware contrastive training laboratory for small vision transformers.

Train a tiny ViT in two stages (label-aware contrastive, then a frozen-encoder
linear head), compare against cross-entropy and unsupervised contrastive
baselines, and measure what the training did to the embedding geometry
(isotropy score, cosine separation, 2-D projections).
"""

from .analysis import (
    CosineReport,
    EmbeddingSet,
    IsotropyReport,
    cosine_report,
    extract_embeddings,
    isotropy_score,
    project_2d,
    top1_from_logits,
)
from .augment import AugmentationPolicy, ViewPair, make_single_view, make_view_pair
from .data import (
    ImageDataset,
    LabeledExample,
    batches,
    gen_synthetic,
    load_cifar_binary,
    patchify,
    save_cifar_binary,
    unpatchify,
)
from .encoder import ViTConfig, ViTEncoder
from .linalg import SymEigResult, pca_project, sym_eig
from .losses import (
    ContrastiveBatch,
    LossValue,
    ProjectionHead,
    cross_entropy,
    npair_loss,
    ntxent_loss,
    supcon_loss,
)
from .pipeline import (
    SGD,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_ce_baseline,
    train_stage1,
    train_stage2,
)
from .rng import RngStream
from .tensor import Parameter, Tensor, backward, no_grad

__version__ = "0.1.0"
