"""Miniature pyramid encoder with spatial-reduction-window attention.

Per stage: queries from every token; keys/values from non-overlapping
mean-pooled windows; global attention of all queries over the pooled set;
GELU MLP; 2x2 patch merging between stages. The full-masked path mirrors
the compact path with doubled window edges and visible-only pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import LayerNorm, Linear, Mlp, Module, scaled_attention
from ..numerics import Tensor, gather_rows, reshape, tmean
from .common import (
    EncoderError,
    PatchMerge,
    VisibilityMask,
    dense_window_partition,
    flatten_grid,
    scatter_to_grid,
    unflatten_grid,
)


@dataclass(frozen=True)
class MiniPVTConfig:
    depths: tuple[int, ...] = (1, 1, 1, 1)
    dims: tuple[int, ...] = (32, 64, 128, 256)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    sr_full: tuple[int, ...] = (8, 4, 2, 1)    # full-space window edges per stage
    mlp_ratio: float = 4.0
    patch_px: int = 4                           # pixels per stage-1 token
    use_pos_embed: bool = True                  # sine-cosine added at input stage

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def compact_sr(self, stage: int) -> int:
        sr = self.sr_full[stage]
        return sr // 2 if sr > 1 else 1


def validate_pvt_geometry(cfg: MiniPVTConfig, grid: tuple[int, int]) -> list[str]:
    """Geometry violations for running `cfg` on a full-space token grid."""
    v: list[str] = []
    n = cfg.num_stages
    if not (len(cfg.dims) == len(cfg.heads) == len(cfg.sr_full) == n):
        v.append("config: depths/dims/heads/sr_full lengths disagree")
        return v
    for s, (dim, heads) in enumerate(zip(cfg.dims, cfg.heads)):
        if dim % heads:
            v.append(f"stage {s}: dim {dim} not divisible by heads {heads}")
    rows, cols = grid
    for s in range(n):
        if rows % (1 << s) or cols % (1 << s):
            v.append(f"stage {s}: grid {rows}x{cols} not divisible by stride {1 << s}")
            continue
        r_s, c_s = rows >> s, cols >> s
        sr = cfg.sr_full[s]
        if sr < 1:
            v.append(f"stage {s}: sr window {sr} must be positive")
            continue
        if sr > 1 and sr % 2:
            v.append(f"stage {s}: odd sr window {sr} cannot halve for the compact path")
            continue
        if r_s % sr or c_s % sr:
            v.append(f"stage {s}: resolution {r_s}x{c_s} not divisible by sr window {sr}")
        csr = cfg.compact_sr(s)
        if (r_s // 2) % csr or (c_s // 2) % csr:
            v.append(f"stage {s}: compact resolution not divisible by sr window {csr}")
    return v


class PVTBlock(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng, dtype):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.q = Linear(dim, dim, rng, dtype=dtype)
        self.k = Linear(dim, dim, rng, dtype=dtype)
        self.v = Linear(dim, dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng, dtype=dtype)
        self.heads = heads


class PVTStage(Module):
    def __init__(self, depth, dim, heads, mlp_ratio, rng, dtype):
        self.blocks = [PVTBlock(dim, heads, mlp_ratio, rng, dtype) for _ in range(depth)]


class PVTEncoder(Module):
    """Stage stack over a token grid; embedding lives in the pipeline."""

    def __init__(self, cfg: MiniPVTConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.stages = [
            PVTStage(cfg.depths[s], cfg.dims[s], cfg.heads[s], cfg.mlp_ratio, rng, dtype)
            for s in range(cfg.num_stages)
        ]
        self.merges = [
            PatchMerge(cfg.dims[s], cfg.dims[s + 1], rng, dtype=dtype)
            for s in range(cfg.num_stages - 1)
        ]

    # -- dense path (compact production input, or full input for baselines) --
    def _dense_block(self, blk: PVTBlock, x: Tensor, sr: int) -> Tensor:
        b, h, w, d = x.shape
        hn = blk.norm1(x)
        flat = flatten_grid(hn)
        q = blk.q(flat)
        if sr == 1:
            pooled = flat
        else:
            pooled = tmean(dense_window_partition(hn, sr), axis=2)  # [B, nW, D]
        attn = scaled_attention(q, blk.k(pooled), blk.v(pooled), blk.heads)
        x = x + unflatten_grid(blk.proj(attn), h, w)
        return x + blk.mlp(blk.norm2(x))

    def forward_dense(self, x: Tensor, sr_per_stage, collect_traces: bool = False):
        """x: [B, H, W, dims[0]]; returns (final grid tensor, traces)."""
        traces: list[Tensor] = []
        for s, stage in enumerate(self.stages):
            for blk in stage.blocks:
                x = self._dense_block(blk, x, sr_per_stage[s])
            if collect_traces:
                traces.append(flatten_grid(x))
            if s < len(self.stages) - 1:
                x = self.merges[s].dense(x)
        return x, traces

    def forward_compact(self, x: Tensor, collect_traces: bool = False):
        srs = [self.cfg.compact_sr(s) for s in range(self.cfg.num_stages)]
        return self.forward_dense(x, srs, collect_traces)

    def forward_full(self, x: Tensor, collect_traces: bool = False):
        """Dense full-resolution input (the encoder-side mask-token baseline)."""
        return self.forward_dense(x, list(self.cfg.sr_full), collect_traces)

    # -- full-input oracle path with placeholders -----------------------------
    def _masked_block(self, blk: PVTBlock, x: Tensor, vis: VisibilityMask, sr: int) -> Tensor:
        if sr == 1 or sr % 2:
            raise EncoderError(f"full-masked path needs an even sr window, got {sr}")
        b, h, w, d = x.shape
        hn = blk.norm1(x)
        flat = flatten_grid(hn)
        vis_idx = vis.visible_in_cell_order()
        q = blk.q(gather_rows(flat, vis_idx))                   # queries: visible only
        win_idx = vis.window_visible_indices(sr)                # [nW, k], k = sr^2/4
        n_win, k = win_idx.shape
        gathered = gather_rows(flat, win_idx.reshape(-1))
        pooled = tmean(reshape(gathered, (b, n_win, k, d)), axis=2)
        attn = scaled_attention(q, blk.k(pooled), blk.v(pooled), blk.heads)
        x = x + scatter_to_grid(blk.proj(attn), vis_idx, h, w)
        h2 = flatten_grid(blk.norm2(x))
        mlp_out = blk.mlp(gather_rows(h2, vis_idx))
        return x + scatter_to_grid(mlp_out, vis_idx, h, w)

    def forward_full_masked(self, x: Tensor, vis: VisibilityMask,
                            collect_traces: bool = False):
        """x: [B, 2H, 2W, dims[0]] with zeros at placeholder positions.

        Returns (visible tokens of the last stage in cell-raster order,
        traces), directly comparable to forward_compact under the compact
        bijection.
        """
        traces: list[Tensor] = []
        out = None
        for s, stage in enumerate(self.stages):
            for blk in stage.blocks:
                x = self._masked_block(blk, x, vis, self.cfg.sr_full[s])
            out = gather_rows(flatten_grid(x), vis.visible_in_cell_order())
            if collect_traces:
                traces.append(out)
            if s < len(self.stages) - 1:
                x, vis = self.merges[s].masked(x, vis)
        return out, traces
