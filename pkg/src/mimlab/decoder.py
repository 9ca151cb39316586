"""Lightweight plain-transformer decoder for masked-pixel reconstruction.

Encoded compact tokens are scattered into the full patch grid, every
dropped position holds one shared learned mask token, fixed sine-cosine
positional embeddings are added to all positions, and a short stack of
global-attention blocks feeds a linear per-patch pixel head. The MSE loss
is supported only on the reconstruction-target patches, so predictions at
kept positions carry exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masking import CompactMap
from .nn import LayerNorm, Linear, Mlp, Module, Parameter, scaled_attention, sincos_pos_embed_2d
from .numerics import Tensor, broadcast_to, concat, gather_rows, reshape, square, tmean


class DecoderError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    depth: int = 2
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.depth < 1:
            raise DecoderError("decoder depth must be >= 1")
        if self.dim % self.heads or self.dim % 4:
            raise DecoderError("decoder dim must divide by heads and by 4 (pos embed)")


class MaskTokenParams(Module):
    """The two shared learned placeholder vectors.

    encoder_sm_token stands in for secondary-masked patches inside the
    encoder input; decoder_mask_token stands in for dropped patches inside
    the decoder input. Each is a single vector regardless of position.
    """

    def __init__(self, embed_dim: int, decoder_dim: int, rng, dtype=np.float32):
        self.encoder_sm_token = Parameter(rng.normal(0.0, 0.02, (embed_dim,)).astype(dtype))
        self.decoder_mask_token = Parameter(rng.normal(0.0, 0.02, (decoder_dim,)).astype(dtype))


class DecoderBlock(Module):
    def __init__(self, dim, heads, mlp_ratio, rng, dtype):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.q = Linear(dim, dim, rng, dtype=dtype)
        self.k = Linear(dim, dim, rng, dtype=dtype)
        self.v = Linear(dim, dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng, dtype=dtype)
        self.heads = heads

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.proj(scaled_attention(self.q(h), self.k(h), self.v(h), self.heads))
        return x + self.mlp(self.norm2(x))


class MAEDecoder(Module):
    """Assemble -> decode -> predict pixels over the full patch grid."""

    def __init__(self, cfg: DecoderConfig, grid_rows: int, grid_cols: int,
                 patch_dim: int, input_dim: int, rng, dtype=np.float32):
        self.cfg = cfg
        self.grid_rows = grid_rows
        self.grid_cols = grid_cols
        self.input_proj = Linear(input_dim, cfg.dim, rng, dtype=dtype)
        self.blocks = [DecoderBlock(cfg.dim, cfg.heads, cfg.mlp_ratio, rng, dtype)
                       for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim, dtype=dtype)
        self.head = Linear(cfg.dim, patch_dim, rng, dtype=dtype)
        # fixed table, excluded from parameters on purpose: bit-identical in (N, dim)
        self._pos_embed = sincos_pos_embed_2d(grid_rows, grid_cols, cfg.dim, dtype=dtype)

    @property
    def num_positions(self) -> int:
        return self.grid_rows * self.grid_cols

    def pos_embed(self) -> np.ndarray:
        return self._pos_embed

    def assemble_full_tokens(self, encoded: Tensor, cmap: CompactMap,
                             mask_token: Parameter) -> Tensor:
        """[B, |kept|, input_dim] -> [B, N, dim] with mask tokens at dropped slots.

        Position to_compact[k] holds projected encoded[k]; every other
        position holds the shared decoder mask token; positional embeddings
        are added to all N positions.
        """
        b, m, _ = encoded.shape
        n = self.num_positions
        if m != len(cmap.to_compact):
            raise DecoderError(f"{m} encoded tokens for {len(cmap.to_compact)} kept patches")
        proj = self.input_proj(encoded)
        mask_row = broadcast_to(reshape(mask_token, (1, 1, self.cfg.dim)),
                                (b, 1, self.cfg.dim))
        table = concat([proj, mask_row], axis=-2)           # [B, M+1, dim]
        placement = np.full(n, m, dtype=np.int64)
        for k, p in enumerate(cmap.to_compact):
            placement[p] = k
        out = gather_rows(table, placement)                  # [B, N, dim]
        return out + Tensor(self._pos_embed)

    def decode(self, tokens: Tensor) -> Tensor:
        """depth x (global self-attention + MLP), then the final norm."""
        if tokens.shape[-2] != self.num_positions:
            raise DecoderError(f"expected {self.num_positions} positions, got {tokens.shape[-2]}")
        x = tokens
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def predict_pixels(self, decoded: Tensor) -> Tensor:
        """[B, N, dim] -> [B, N, patch_dim] predictions in normalized-target space."""
        return self.head(decoded)


@dataclass
class LossReport:
    total: float                  # mean over support patches of per-patch MSE
    per_patch: np.ndarray         # [B, |support|] per-patch mean squared error
    count: int                    # |support|
    loss: Tensor                  # scalar, for backward


def masked_mse(pred: Tensor, targets: np.ndarray, support) -> LossReport:
    """MSE over the support patches only; kept positions have zero influence.

    pred: [B, N, patch_dim]; targets: [B, |support|, patch_dim] aligned with
    `support` (patch indices into the full grid).
    """
    idx = np.asarray(list(support), dtype=np.int64)
    if idx.size == 0:
        raise DecoderError("empty loss support")
    if targets.shape[-2] != idx.size:
        raise DecoderError(f"{targets.shape[-2]} targets for {idx.size} support patches")
    picked = gather_rows(pred, idx)
    err = square(picked - Tensor(np.asarray(targets, dtype=pred.data.dtype)))
    per_patch = tmean(err, axis=-1)          # [B, |support|]
    loss = tmean(per_patch)
    return LossReport(loss.item(), per_patch.data.copy(), int(idx.size), loss)
