"""A small pre-norm Vision Transformer over patch sequences.

Patch rows are linearly embedded, positioned, run through ``depth`` blocks of
multi-head self-attention and a ReLU MLP (both pre-norm with residuals), then
layer-normalized and pooled to one vector per image.  No dropout anywhere:
the forward pass is deterministic and finite-difference checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import RngStream
from .tensor import Parameter, Tensor

INIT_STD = 0.02


@dataclass
class ViTConfig:
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 2.0
    pooling: str = "mean"  # or "cls"
    image_size: int = 32

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch {self.patch_size}"
            )
        if self.pooling not in ("mean", "cls"):
            raise ConfigError(f"pooling must be 'mean' or 'cls', got {self.pooling!r}")

    @property
    def tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))


class ViTEncoder:
    """Parameter container plus the forward pass; prefix ``encoder.``"""

    def __init__(self, config: ViTConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ViTConfig, rng: RngStream) -> "ViTEncoder":
        """Fresh weights: truncated normal(0, 0.02) matrices, zero biases,
        normal(0, 0.02) positions, unit layer-norm gains."""
        d = config.embed_dim
        params: dict[str, Parameter] = {}

        def weight(name, shape):
            params[name] = Parameter(rng.child(name).truncated_normal(INIT_STD, shape), name)

        def zeros(name, shape):
            params[name] = Parameter(np.zeros(shape), name)

        def ones(name, shape):
            params[name] = Parameter(np.ones(shape), name)

        weight("encoder.patch_embed.weight", (config.patch_dim, d))
        zeros("encoder.patch_embed.bias", (d,))
        seq = config.tokens + (1 if config.pooling == "cls" else 0)
        params["encoder.pos_embed"] = Parameter(
            rng.child("encoder.pos_embed").normal(0.0, INIT_STD, (seq, d)),
            "encoder.pos_embed",
        )
        if config.pooling == "cls":
            weight("encoder.cls_token", (1, 1, d))
        for i in range(config.depth):
            pre = f"encoder.block{i}"
            ones(f"{pre}.norm1.gain", (d,))
            zeros(f"{pre}.norm1.bias", (d,))
            for proj in ("q", "k", "v", "o"):
                weight(f"{pre}.attn.w{proj}", (d, d))
                zeros(f"{pre}.attn.b{proj}", (d,))
            ones(f"{pre}.norm2.gain", (d,))
            zeros(f"{pre}.norm2.bias", (d,))
            weight(f"{pre}.mlp.w1", (d, config.hidden_dim))
            zeros(f"{pre}.mlp.b1", (config.hidden_dim,))
            weight(f"{pre}.mlp.w2", (config.hidden_dim, d))
            zeros(f"{pre}.mlp.b2", (d,))
        ones("encoder.final_norm.gain", (d,))
        zeros("encoder.final_norm.bias", (d,))
        return cls(config, params)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def freeze(self) -> None:
        for p in self.params.values():
            p.frozen = True

    def unfreeze(self) -> None:
        for p in self.params.values():
            p.frozen = False

    # -- forward ------------------------------------------------------------

    def forward(self, patches, attn_sink: list | None = None) -> Tensor:
        """Encode B x T x patch_dim sequences into B x embed_dim vectors.

        ``attn_sink``, when given, collects each block's post-softmax
        attention array (B, heads, T', T') for inspection.
        """
        cfg = self.config
        if not isinstance(patches, Tensor):
            patches = Tensor(patches)
        if patches.ndim != 3 or patches.shape[1] != cfg.tokens:
            raise ShapeError(
                f"expected B x {cfg.tokens} x {cfg.patch_dim} patches, got {patches.shape}"
            )
        if patches.shape[2] != cfg.patch_dim:
            raise ShapeError(
                f"patch rows have length {patches.shape[2]}, expected {cfg.patch_dim}"
            )
        p = self.params
        b = patches.shape[0]
        d = cfg.embed_dim

        flat = T.reshape(patches, (b * cfg.tokens, cfg.patch_dim))
        x = T.add(T.matmul(flat, p["encoder.patch_embed.weight"]), p["encoder.patch_embed.bias"])
        x = T.reshape(x, (b, cfg.tokens, d))
        if cfg.pooling == "cls":
            x = T.concat([T.repeat0(p["encoder.cls_token"], b), x], axis=1)
        x = T.add(x, p["encoder.pos_embed"])
        seq = x.shape[1]

        for i in range(cfg.depth):
            pre = f"encoder.block{i}"
            x = T.add(x, self._attention(x, pre, b, seq, attn_sink))
            x = T.add(x, self._mlp(x, pre, b, seq))

        x = T.layer_norm_rows(x, p["encoder.final_norm.gain"], p["encoder.final_norm.bias"])
        if cfg.pooling == "cls":
            return T.select_token(x, 0)
        return T.mean_axis(x, 1)

    def _project(self, x2d: Tensor, weight: str, bias: str) -> Tensor:
        return T.add(T.matmul(x2d, self.params[weight]), self.params[bias])

    def _attention(self, x: Tensor, prefix: str, b: int, seq: int, attn_sink):
        cfg = self.config
        d = cfg.embed_dim
        dh = d // cfg.heads
        p = self.params
        y = T.layer_norm_rows(x, p[f"{prefix}.norm1.gain"], p[f"{prefix}.norm1.bias"])
        flat = T.reshape(y, (b * seq, d))

        def heads(name):
            proj = self._project(flat, f"{prefix}.attn.w{name}", f"{prefix}.attn.b{name}")
            return T.transpose(T.reshape(proj, (b, seq, cfg.heads, dh)), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        # Scaling q (B,h,T,dh) is cheaper than scaling the (B,h,T,T) scores.
        scores = T.matmul(T.scale(q, 1.0 / math.sqrt(dh)), T.transpose(k, (0, 1, 3, 2)))
        attn = T.softmax_rows(scores)
        if attn_sink is not None:
            attn_sink.append(attn.data)
        ctx = T.matmul(attn, v)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b * seq, d))
        out = self._project(merged, f"{prefix}.attn.wo", f"{prefix}.attn.bo")
        return T.reshape(out, (b, seq, d))

    def _mlp(self, x: Tensor, prefix: str, b: int, seq: int) -> Tensor:
        cfg = self.config
        p = self.params
        y = T.layer_norm_rows(x, p[f"{prefix}.norm2.gain"], p[f"{prefix}.norm2.bias"])
        flat = T.reshape(y, (b * seq, cfg.embed_dim))
        hidden = T.relu(self._project(flat, f"{prefix}.mlp.w1", f"{prefix}.mlp.b1"))
        out = self._project(hidden, f"{prefix}.mlp.w2", f"{prefix}.mlp.b2")
        return T.reshape(out, (b, seq, cfg.embed_dim))
