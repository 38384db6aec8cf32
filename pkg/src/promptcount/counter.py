"""Exemplar-conditioned density counter.

Pipeline: a convolutional patch embedder turns the image into tokens, the
exemplar patches become key/value tokens through two bias-free projections,
one cross-attention block fuses them (image tokens as queries, so the query
side carries no learned projection), and a stack of stride-2 transposed
convolutions decodes the fused tokens back to a full-resolution density
grid. The final softplus keeps the grid smoothly nonnegative.

Both exemplar streams run through the same weights: a positive forward pass
and a negative forward pass differ only in the patches supplied.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .density import DensityMap, count_from_density
from .errors import ConfigurationError, ShapeMismatchError, UsageError
from .images import to_float
from .serialization import config_hash, load_archive, save_archive

__all__ = [
    "CounterConfig",
    "CounterModel",
    "patches_to_tensor",
    "save_checkpoint",
    "load_checkpoint",
    "count_from_density",
    "DensityMap",
]


@dataclass(frozen=True)
class CounterConfig:
    image_size: int = 64
    patch_size: int = 16
    embed_dim: int = 64
    exemplar_embed_dim: int = 64
    exemplar_patch: int = 16
    heads: int = 1
    mlp_ratio: float = 2.0
    density_scale: float = 1.0
    zero_exemplar_bypass: bool = True

    def __post_init__(self) -> None:
        if self.image_size < 4 or self.patch_size < 2:
            raise ConfigurationError(
                f"image_size/patch_size too small: {self.image_size}/{self.patch_size}"
            )
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"patch_size {self.patch_size} must divide image_size {self.image_size}"
            )
        stages = math.log2(self.patch_size)
        if stages != int(stages):
            raise ConfigurationError(
                f"patch_size must be a power of two, got {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"heads {self.heads} must divide embed_dim {self.embed_dim}"
            )
        if self.density_scale <= 0:
            raise ConfigurationError(
                f"density_scale must be positive, got {self.density_scale}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CounterConfig":
        return cls(**data)


def patches_to_tensor(
    patches: Sequence[np.ndarray], dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """List of (S, S, 3) float patches -> (k, 3, S, S) tensor; empty list allowed."""
    if len(patches) == 0:
        return torch.zeros((0, 3, 1, 1), dtype=dtype)
    arr = np.stack([to_float(p) for p in patches])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().to(dtype)


class CounterModel(nn.Module):
    def __init__(self, config: Optional[CounterConfig] = None):
        super().__init__()
        self.config = config or CounterConfig()
        c = self.config
        self.patch_embed = nn.Conv2d(3, c.embed_dim, c.patch_size, stride=c.patch_size)
        self.encoder_norm = nn.LayerNorm(c.embed_dim)
        self.exemplar_embed = nn.Conv2d(
            3, c.exemplar_embed_dim, c.exemplar_patch, stride=c.exemplar_patch
        )
        self.exemplar_norm = nn.LayerNorm(c.exemplar_embed_dim)
        self.key_proj = nn.Linear(c.exemplar_embed_dim, c.embed_dim, bias=False)
        self.value_proj = nn.Linear(c.exemplar_embed_dim, c.embed_dim, bias=False)
        self.fuse_norm = nn.LayerNorm(c.embed_dim)
        hidden = int(c.mlp_ratio * c.embed_dim)
        self.fuse_mlp = nn.Sequential(
            nn.Linear(c.embed_dim, hidden), nn.SiLU(), nn.Linear(hidden, c.embed_dim)
        )
        stages = int(math.log2(c.patch_size))
        ups = []
        ch = c.embed_dim
        for _ in range(stages):
            nxt = max(ch // 2, 8)
            ups.append(nn.ConvTranspose2d(ch, nxt, 4, stride=2, padding=1))
            ups.append(nn.SiLU())
            ch = nxt
        self.decoder = nn.Sequential(*ups)
        self.density_head = nn.Conv2d(ch, 1, 3, padding=1)
        # Bias the head low so an untrained model emits sparse density rather
        # than ~0.7 per pixel, which would start counts thousands high.
        nn.init.constant_(self.density_head.bias, -2.0)

    @property
    def grid_tokens(self) -> tuple[int, int]:
        side = self.config.image_size // self.config.patch_size
        return (side, side)

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        """(3, H, W) -> (M, D) tokens."""
        c = self.config
        if image.shape != (3, c.image_size, c.image_size):
            raise ShapeMismatchError(
                f"expected image of shape (3, {c.image_size}, {c.image_size}), "
                f"got {tuple(image.shape)}"
            )
        feat = self.patch_embed(image.unsqueeze(0))
        tokens = feat.flatten(2).transpose(1, 2).squeeze(0)
        return self.encoder_norm(tokens)

    def encode_exemplars(self, patches: torch.Tensor) -> torch.Tensor:
        """(k, 3, S, S) -> (T, D_e) tokens; k may be zero."""
        if patches.ndim != 4 or (patches.shape[0] and patches.shape[1] != 3):
            raise ShapeMismatchError(
                f"expected exemplar patches of shape (k, 3, S, S), got {tuple(patches.shape)}"
            )
        if patches.shape[0] == 0:
            return patches.new_zeros((0, self.config.exemplar_embed_dim))
        side = patches.shape[-1]
        if side % self.config.exemplar_patch != 0 or patches.shape[-2] != side:
            raise ShapeMismatchError(
                f"exemplar side {tuple(patches.shape[-2:])} must be square and "
                f"divisible by exemplar_patch {self.config.exemplar_patch}"
            )
        feat = self.exemplar_embed(patches)
        tokens = feat.flatten(2).transpose(1, 2).reshape(-1, self.config.exemplar_embed_dim)
        return self.exemplar_norm(tokens)

    def fuse(
        self,
        query: torch.Tensor,
        exemplar_tokens: torch.Tensor,
        return_attention: bool = False,
    ):
        """Cross-attention with image tokens as queries; output shape == query shape.

        With zero exemplar tokens the query passes through unchanged (or a
        usage error is raised when the bypass is disabled).
        """
        c = self.config
        if query.ndim != 2 or query.shape[1] != c.embed_dim:
            raise ShapeMismatchError(
                f"query must be (M, {c.embed_dim}), got {tuple(query.shape)}"
            )
        if exemplar_tokens.ndim != 2 or (
            exemplar_tokens.shape[0] and exemplar_tokens.shape[1] != c.exemplar_embed_dim
        ):
            raise ShapeMismatchError(
                f"exemplar tokens must be (T, {c.exemplar_embed_dim}), "
                f"got {tuple(exemplar_tokens.shape)}"
            )
        if exemplar_tokens.shape[0] == 0:
            if not c.zero_exemplar_bypass:
                raise UsageError("zero exemplar tokens with the identity bypass disabled")
            if return_attention:
                return query, query.new_zeros((c.heads, query.shape[0], 0))
            return query

        m = query.shape[0]
        t = exemplar_tokens.shape[0]
        head_dim = c.embed_dim // c.heads
        q = query.reshape(m, c.heads, head_dim).transpose(0, 1)
        k = self.key_proj(exemplar_tokens).reshape(t, c.heads, head_dim).transpose(0, 1)
        v = self.value_proj(exemplar_tokens).reshape(t, c.heads, head_dim).transpose(0, 1)
        attn = torch.softmax((q @ k.transpose(1, 2)) / math.sqrt(head_dim), dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(m, c.embed_dim)
        fused = query + out
        fused = fused + self.fuse_mlp(self.fuse_norm(fused))
        if return_attention:
            return fused, attn
        return fused

    def decode(self, tokens: torch.Tensor) -> torch.Tensor:
        """(M, D) fused tokens -> (H, W) nonnegative density grid."""
        h, w = self.grid_tokens
        grid = tokens.transpose(0, 1).reshape(1, self.config.embed_dim, h, w)
        out = self.density_head(self.decoder(grid))
        return torch.nn.functional.softplus(out).squeeze(0).squeeze(0)

    def forward(self, image: torch.Tensor, exemplar_patches: torch.Tensor) -> torch.Tensor:
        query = self.encode_image(image)
        ex_tokens = self.encode_exemplars(exemplar_patches)
        fused = self.fuse(query, ex_tokens)
        return self.decode(fused)

    @torch.no_grad()
    def predict(
        self, image: np.ndarray, exemplar_patches: Sequence[np.ndarray]
    ) -> DensityMap:
        """Inference on a (H, W, 3) image with positive exemplar patches."""
        was_training = self.training
        self.eval()
        try:
            img = torch.from_numpy(to_float(image)).permute(2, 0, 1).contiguous()
            param = next(self.parameters())
            img = img.to(param.dtype)
            patches = patches_to_tensor(exemplar_patches, dtype=param.dtype)
            grid = self.forward(img, patches)
        finally:
            self.train(was_training)
        return DensityMap(
            grid=grid.detach().cpu().numpy().astype(np.float32),
            scale=self.config.density_scale,
        )


def save_checkpoint(path: Union[str, Path], model: CounterModel) -> None:
    cfg = model.config.to_dict()
    meta = {
        "kind": "counter-checkpoint",
        "config": cfg,
        "config_hash": config_hash(cfg),
    }
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    save_archive(path, meta, tensors)


def load_checkpoint(path: Union[str, Path]) -> CounterModel:
    meta, tensors = load_archive(path)
    if meta.get("kind") != "counter-checkpoint":
        raise ConfigurationError(
            f"{path} is not a counter checkpoint (kind={meta.get('kind')!r})"
        )
    model = CounterModel(CounterConfig.from_dict(meta["config"]))
    state = {k: torch.from_numpy(v.copy()) for k, v in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    return model
