"""Miniature hierarchical encoder with (shifted) local-window attention.

Blocks alternate plain window attention with a cyclic half-window shift.
The stage-1 full-space window edge must come from {16 * 2^n}; per stage the
edge halves so its image footprint is constant, and the compact path always
uses half the full-space edge and shift. Relative-position bias:

  off         no positional term (the equivalence-oracle setting)
  compact     learned per-offset table in compact window coordinates
  full-space  one table in full-space offsets; the compact path reads it at
              doubled offsets (negative control: sampled full-space offsets
              differ from doubled cell offsets, so equivalence must fail)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import LayerNorm, Linear, Mlp, Module, Parameter, scaled_attention
from ..numerics import Tensor, gather_rows, reshape, transpose
from .common import (
    EncoderError,
    PatchMerge,
    VisibilityMask,
    dense_window_partition,
    dense_window_reverse,
    flatten_grid,
    gather_grid,
    roll_permutation,
    scatter_to_grid,
)

BIAS_MODES = ("off", "compact", "full-space")


@dataclass(frozen=True)
class MiniSwinConfig:
    depths: tuple[int, ...] = (2, 2, 2, 2)
    dims: tuple[int, ...] = (32, 64, 128, 256)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    window: int = 16            # stage-1 full-space edge; halves per stage
    shift: int | None = None    # full-space stage-1 offset; defaults to window/2
    use_shift: bool = True
    rel_bias: str = "off"
    mlp_ratio: float = 4.0
    patch_px: int = 4

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def full_window(self, stage: int) -> int:
        return max(1, self.window >> stage)

    def full_shift(self, stage: int) -> int:
        if not self.use_shift:
            return 0
        return self.full_window(stage) // 2

    def compact_window(self, stage: int) -> int:
        return max(1, self.full_window(stage) // 2)


def _is_pow2_multiple_of_16(n: int) -> bool:
    if n < 16 or n % 16:
        return False
    q = n // 16
    return q & (q - 1) == 0


def validate_swin_geometry(cfg: MiniSwinConfig, grid: tuple[int, int]) -> list[str]:
    """Geometry violations for running `cfg` on a full-space token grid."""
    v: list[str] = []
    n = cfg.num_stages
    if not (len(cfg.dims) == len(cfg.heads) == n):
        v.append("config: depths/dims/heads lengths disagree")
        return v
    for s, (dim, heads) in enumerate(zip(cfg.dims, cfg.heads)):
        if dim % heads:
            v.append(f"stage {s}: dim {dim} not divisible by heads {heads}")
    if not _is_pow2_multiple_of_16(cfg.window):
        v.append(f"window {cfg.window} not of the form 16*2^n")
    if cfg.shift is not None and cfg.shift != cfg.window // 2:
        v.append(f"shift must be half window: got {cfg.shift} for window {cfg.window}")
    if cfg.use_shift:
        for s, depth in enumerate(cfg.depths):
            if depth % 2:
                v.append(f"stage {s}: depth {depth} must be even to alternate shifted blocks")
    if cfg.rel_bias not in BIAS_MODES:
        v.append(f"unknown rel_bias mode {cfg.rel_bias!r}")
    rows, cols = grid
    for s in range(n):
        if rows % (1 << s) or cols % (1 << s):
            v.append(f"stage {s}: grid {rows}x{cols} not divisible by stride {1 << s}")
            continue
        r_s, c_s = rows >> s, cols >> s
        w_f = cfg.full_window(s)
        if r_s % w_f or c_s % w_f:
            v.append(f"stage {s}: resolution {r_s}x{c_s} not divisible by window {w_f}")
        w_c = cfg.compact_window(s)
        if (r_s // 2) % w_c or (c_s // 2) % w_c:
            v.append(f"stage {s}: compact resolution not divisible by window {w_c}")
    return v


def _relative_offset_index(w: int, scale: int = 1, extent: int | None = None) -> np.ndarray:
    """[w*w, w*w] flat offset-table indices for a dense window.

    `scale` multiplies the coordinate deltas (the doubled-offset read of a
    full-space table); `extent` is the window edge the table was sized for.
    """
    if extent is None:
        extent = scale * w if scale > 1 else w
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij"), axis=-1)
    coords = coords.reshape(-1, 2)
    delta = (coords[:, None, :] - coords[None, :, :]) * scale
    return ((delta[..., 0] + extent - 1) * (2 * extent - 1)
            + (delta[..., 1] + extent - 1)).astype(np.int64)


class SwinBlock(Module):
    def __init__(self, dim, heads, window_full, mlp_ratio, rel_bias, rng, dtype):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.q = Linear(dim, dim, rng, dtype=dtype)
        self.k = Linear(dim, dim, rng, dtype=dtype)
        self.v = Linear(dim, dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng, dtype=dtype)
        self.heads = heads
        self.bias_table = None
        if rel_bias == "compact":
            w_c = max(1, window_full // 2)
            size = (2 * w_c - 1) ** 2
            self.bias_table = Parameter(rng.normal(0.0, 0.02, (size, heads)).astype(dtype))
        elif rel_bias == "full-space":
            size = (2 * window_full - 1) ** 2
            self.bias_table = Parameter(rng.normal(0.0, 0.02, (size, heads)).astype(dtype))

    def window_bias(self, index: np.ndarray) -> Tensor:
        """Gather [Tq, Tk] (or [nW, Tq, Tk]) offset indices -> bias for logits."""
        shape = index.shape
        rows = gather_rows(self.bias_table, index.reshape(-1))      # [prod, heads]
        h = rows.shape[-1]
        out = reshape(rows, shape + (h,))
        axes = tuple(range(len(shape) - 2)) + (len(shape), len(shape) - 2, len(shape) - 1)
        return transpose(out, axes)                                  # [..., heads, Tq, Tk]


class SwinStage(Module):
    def __init__(self, depth, dim, heads, window_full, mlp_ratio, rel_bias, rng, dtype):
        self.blocks = [
            SwinBlock(dim, heads, window_full, mlp_ratio, rel_bias, rng, dtype)
            for _ in range(depth)
        ]


class SwinEncoder(Module):
    def __init__(self, cfg: MiniSwinConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.stages = [
            SwinStage(cfg.depths[s], cfg.dims[s], cfg.heads[s], cfg.full_window(s),
                      cfg.mlp_ratio, cfg.rel_bias, rng, dtype)
            for s in range(cfg.num_stages)
        ]
        self.merges = [
            PatchMerge(cfg.dims[s], cfg.dims[s + 1], rng, dtype=dtype)
            for s in range(cfg.num_stages - 1)
        ]

    # -- dense path ----------------------------------------------------------
    def _dense_block(self, blk: SwinBlock, x: Tensor, window: int, shift: int,
                     bias_index: np.ndarray | None) -> Tensor:
        b, h, w, d = x.shape
        hn = blk.norm1(x)
        if shift:
            hn = gather_grid(hn, roll_permutation(h, w, shift), h, w)
        parts = dense_window_partition(hn, window)                  # [B, nW, w*w, D]
        bias = blk.window_bias(bias_index) if bias_index is not None else None
        attn = scaled_attention(blk.q(parts), blk.k(parts), blk.v(parts), blk.heads, bias)
        out = dense_window_reverse(blk.proj(attn), window, h, w)
        if shift:
            # inverse of a (-s, -s) roll is a (-(H-s), -(W-s)) roll; square grids here
            out = gather_grid(out, np.argsort(roll_permutation(h, w, shift)), h, w)
        x = x + out
        return x + blk.mlp(blk.norm2(x))

    def _dense_stage_plan(self, stage_idx: int, compact: bool):
        w_full = self.cfg.full_window(stage_idx)
        window = self.cfg.compact_window(stage_idx) if compact else w_full
        shift_full = self.cfg.full_shift(stage_idx)
        shift = shift_full // 2 if compact else shift_full
        if self.cfg.rel_bias == "compact":
            if not compact:
                raise EncoderError("compact-coordinate bias tables serve the compact path only")
            bias_index = _relative_offset_index(window)
        elif self.cfg.rel_bias == "full-space":
            # compact path reads the full-space table at doubled offsets
            bias_index = (_relative_offset_index(window, scale=2, extent=w_full)
                          if compact else _relative_offset_index(window))
        else:
            bias_index = None
        return window, shift, bias_index

    def _forward_dense(self, x: Tensor, compact: bool, collect_traces: bool):
        traces: list[Tensor] = []
        for s, stage in enumerate(self.stages):
            window, shift, bias_index = self._dense_stage_plan(s, compact)
            for i, blk in enumerate(stage.blocks):
                use_shift = shift if (i % 2 == 1 and window > 1) else 0
                x = self._dense_block(blk, x, window, use_shift, bias_index)
            if collect_traces:
                traces.append(flatten_grid(x))
            if s < len(self.stages) - 1:
                x = self.merges[s].dense(x)
        return x, traces

    def forward_compact(self, x: Tensor, collect_traces: bool = False):
        return self._forward_dense(x, compact=True, collect_traces=collect_traces)

    def forward_full(self, x: Tensor, collect_traces: bool = False):
        return self._forward_dense(x, compact=False, collect_traces=collect_traces)

    # -- full-input oracle path ------------------------------------------------
    def _masked_block(self, blk: SwinBlock, x: Tensor, vis: VisibilityMask,
                      window: int, shift: int, use_bias: bool) -> Tensor:
        if window < 2 or window % 2:
            raise EncoderError(f"full-masked path needs an even window, got {window}")
        b, h, w, d = x.shape
        hn = blk.norm1(x)
        if shift:
            perm = roll_permutation(h, w, shift)
            hn = gather_grid(hn, perm, h, w)
            rolled_vis = vis.rolled(shift)
        else:
            rolled_vis = vis
        win_idx = rolled_vis.window_visible_indices(window)         # [nW, k]
        n_win, k = win_idx.shape
        parts = reshape(gather_rows(flatten_grid(hn), win_idx.reshape(-1)),
                        (b, n_win, k, d))
        bias = None
        if use_bias:
            # local window coordinates of the gathered visible tokens
            local_r = (win_idx // w) % window
            local_c = (win_idx % w) % window
            dr = local_r[:, :, None] - local_r[:, None, :]
            dc = local_c[:, :, None] - local_c[:, None, :]
            index = (dr + window - 1) * (2 * window - 1) + (dc + window - 1)
            bias = blk.window_bias(index)                            # [nW, heads, k, k]
        attn = scaled_attention(blk.q(parts), blk.k(parts), blk.v(parts), blk.heads, bias)
        out = reshape(blk.proj(attn), (b, n_win * k, d))
        scattered = scatter_to_grid(out, win_idx.reshape(-1), h, w)
        if shift:
            scattered = gather_grid(scattered, np.argsort(perm), h, w)
        x = x + scattered
        vis_idx = vis.visible_in_cell_order()
        h2 = flatten_grid(blk.norm2(x))
        mlp_out = blk.mlp(gather_rows(h2, vis_idx))
        return x + scatter_to_grid(mlp_out, vis_idx, h, w)

    def forward_full_masked(self, x: Tensor, vis: VisibilityMask,
                            collect_traces: bool = False):
        """x: [B, 2H, 2W, dims[0]], zeros at placeholders; traces are visible
        tokens in cell-raster order, comparable to forward_compact."""
        if self.cfg.rel_bias == "compact":
            raise EncoderError("compact-coordinate bias tables serve the compact path only")
        use_bias = self.cfg.rel_bias == "full-space"
        traces: list[Tensor] = []
        out = None
        for s, stage in enumerate(self.stages):
            window = self.cfg.full_window(s)
            shift = self.cfg.full_shift(s)
            for i, blk in enumerate(stage.blocks):
                use_shift = shift if (i % 2 == 1 and window > 1) else 0
                x = self._masked_block(blk, x, vis, window, use_shift, use_bias)
            out = gather_rows(flatten_grid(x), vis.visible_in_cell_order())
            if collect_traces:
                traces.append(out)
            if s < len(self.stages) - 1:
                x, vis = self.merges[s].masked(x, vis)
        return out, traces
