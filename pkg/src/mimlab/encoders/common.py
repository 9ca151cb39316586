"""Shared machinery for the pyramid encoders.

Both encoders expose two forward paths over a token grid:

  compact      dense [B, H, W, D] grid (the production input)
  full-masked  [B, 2H, 2W, D] grid where only one token per 2x2 cell is
               visible; placeholders hold zeros and never contribute

The full-masked path is the oracle for the compact one: window membership
is decided at cell granularity (windows, shifts, and pooling regions are
even-sized and even-aligned in full space), so every full-space window
contains exactly the tokens of the matching compact window. Visible tokens
are compared in cell-raster order, which is exactly compact raster order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..masking import MaskPlan
from ..nn import LayerNorm, Linear, Module
from ..numerics import Tensor, concat, gather_rows, reshape, transpose


class EncoderError(ValueError):
    """Geometry misuse the validators would have caught."""


# ---------------------------------------------------------------------------
# visibility bookkeeping

@dataclass
class VisibilityMask:
    """Boolean per token position; exactly one visible per 2x2 cell.

    A fully dense (all-visible) mask is also accepted as the degenerate
    case where the masked path must reduce to the plain full forward; it
    supports single-stage forwards only (no merge semantics).
    """

    mask: np.ndarray  # bool [H, W]

    def __post_init__(self):
        h, w = self.mask.shape
        if h % 2 or w % 2:
            raise EncoderError("visibility grid must have even extents")
        cells = self.mask.reshape(h // 2, 2, w // 2, 2).transpose(0, 2, 1, 3)
        counts = cells.reshape(-1, 4).sum(axis=1)
        self.dense = bool(np.all(counts == 4))
        if not self.dense and not np.all(counts == 1):
            bad = np.flatnonzero(counts != 1)
            raise EncoderError(f"cells without exactly one visible token: {bad[:8].tolist()}")

    @classmethod
    def from_plan(cls, plan: MaskPlan) -> "VisibilityMask":
        grid = plan.grid
        m = np.zeros((grid.rows, grid.cols), dtype=bool)
        for idx in plan.kept:
            m[divmod(idx, grid.cols)] = True
        return cls(m)

    @classmethod
    def all_visible(cls, rows: int, cols: int) -> "VisibilityMask":
        return cls(np.ones((rows, cols), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def visible_in_cell_order(self) -> np.ndarray:
        """Flat index of each cell's visible token, cells in raster order."""
        h, w = self.mask.shape
        if self.dense:
            return np.arange(h * w, dtype=np.int64)
        cells = self.mask.reshape(h // 2, 2, w // 2, 2).transpose(0, 2, 1, 3).reshape(-1, 4)
        slot = cells.argmax(axis=1)  # one-hot rows
        ci, cj = np.divmod(np.arange(cells.shape[0]), w // 2)
        r = 2 * ci + slot // 2
        c = 2 * cj + slot % 2
        return (r * w + c).astype(np.int64)

    def rolled(self, shift: int) -> "VisibilityMask":
        """Cyclic shift by (-shift, -shift); shift must be even to map cells to cells."""
        if shift % 2:
            raise EncoderError("cyclic shift must be even in full space")
        return VisibilityMask(np.roll(self.mask, (-shift, -shift), axis=(0, 1)))

    def window_visible_indices(self, edge: int) -> np.ndarray:
        """[n_windows, k] flat indices of visible tokens per window.

        Windows tile the grid in raster order; under the one-per-cell
        property every window holds exactly k = edge^2/4 visible tokens
        (edge^2 for the degenerate dense mask).
        """
        h, w = self.mask.shape
        if edge % 2 or h % edge or w % edge:
            raise EncoderError(f"window edge {edge} incompatible with {h}x{w} grid")
        k = edge * edge if self.dense else edge * edge // 4
        flat = np.arange(h * w).reshape(h, w)
        out = np.empty(((h // edge) * (w // edge), k), dtype=np.int64)
        wi = 0
        for r0 in range(0, h, edge):
            for c0 in range(0, w, edge):
                block = self.mask[r0:r0 + edge, c0:c0 + edge]
                idx = flat[r0:r0 + edge, c0:c0 + edge][block]
                if idx.size != k:
                    raise EncoderError(
                        f"window at ({r0},{c0}) holds {idx.size} visible tokens, expected {k}"
                    )
                out[wi] = idx
                wi += 1
        return out

    def merge_groups(self) -> tuple[np.ndarray, "VisibilityMask"]:
        """Index plan for the 2x2-cell downsample.

        Returns ([n_new_cells, 4] old flat visible indices in old-cell raster
        order per new cell, and the next-stage mask with each merged token at
        the top-left of its new cell). Visible count is exactly quartered.
        """
        if self.dense:
            raise EncoderError("dense degenerate masks support single-stage forwards only")
        h, w = self.mask.shape
        if h % 4 or w % 4:
            raise EncoderError("merge needs extents divisible by 4 in full space")
        per_cell = self.visible_in_cell_order().reshape(h // 2, w // 2)
        groups = per_cell.reshape(h // 4, 2, w // 4, 2).transpose(0, 2, 1, 3).reshape(-1, 4)
        new_mask = np.zeros((h // 2, w // 2), dtype=bool)
        new_mask[::2, ::2] = True
        return groups, VisibilityMask(new_mask)


# ---------------------------------------------------------------------------
# dense grid reshuffles (compact path)

def flatten_grid(x: Tensor) -> Tensor:
    """[B, H, W, D] -> [B, H*W, D]"""
    b, h, w, d = x.shape
    return reshape(x, (b, h * w, d))


def unflatten_grid(x: Tensor, h: int, w: int) -> Tensor:
    b, _, d = x.shape
    return reshape(x, (b, h, w, d))


def dense_window_partition(x: Tensor, edge: int) -> Tensor:
    """[B, H, W, D] -> [B, n_windows, edge*edge, D] raster windows."""
    b, h, w, d = x.shape
    if h % edge or w % edge:
        raise EncoderError(f"grid {h}x{w} not divisible by window {edge}")
    t = reshape(x, (b, h // edge, edge, w // edge, edge, d))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, (h // edge) * (w // edge), edge * edge, d))


def dense_window_reverse(x: Tensor, edge: int, h: int, w: int) -> Tensor:
    """Inverse of dense_window_partition."""
    b = x.shape[0]
    d = x.shape[-1]
    t = reshape(x, (b, h // edge, w // edge, edge, edge, d))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, h, w, d))


def roll_permutation(h: int, w: int, shift: int) -> np.ndarray:
    """Flat gather indices realizing a cyclic (-shift, -shift) roll."""
    rows = (np.arange(h) + shift) % h
    cols = (np.arange(w) + shift) % w
    return (rows[:, None] * w + cols[None, :]).reshape(-1).astype(np.int64)


def gather_grid(x: Tensor, flat_idx: np.ndarray, h: int, w: int) -> Tensor:
    """Gather flat positions of a [B, H, W, D] grid back into grid form."""
    b, _, _, d = x.shape
    out = gather_rows(flatten_grid(x), flat_idx)
    return reshape(out, (b, h, w, d))


def scatter_to_grid(values: Tensor, positions: np.ndarray, h: int, w: int) -> Tensor:
    """Place values [B, M, D] at flat `positions` of a zeroed [B, H, W, D] grid."""
    b, m, d = values.shape
    zeros = Tensor(np.zeros((b, 1, d), dtype=values.data.dtype))
    table = concat([values, zeros], axis=-2)
    place = np.full(h * w, m, dtype=np.int64)
    place[positions] = np.arange(m)
    return reshape(gather_rows(table, place), (b, h, w, d))


# ---------------------------------------------------------------------------
# stage downsampling (2x2 patch merging)

class PatchMerge(Module):
    """Concat each 2x2 token group (raster order) -> LN -> linear projection."""

    def __init__(self, dim_in: int, dim_out: int, rng, dtype=np.float32):
        self.norm = LayerNorm(4 * dim_in, dtype=dtype)
        self.proj = Linear(4 * dim_in, dim_out, rng, bias=False, dtype=dtype)

    def dense(self, x: Tensor) -> Tensor:
        """[B, H, W, D] -> [B, H/2, W/2, dim_out]"""
        b, h, w, d = x.shape
        t = reshape(x, (b, h // 2, 2, w // 2, 2, d))
        t = transpose(t, (0, 1, 3, 2, 4, 5))
        t = reshape(t, (b, (h // 2) * (w // 2), 4 * d))
        out = self.proj(self.norm(t))
        return reshape(out, (b, h // 2, w // 2, out.shape[-1]))

    def masked(self, x: Tensor, vis: VisibilityMask) -> tuple[Tensor, VisibilityMask]:
        """Merge the 4 visible tokens of each 2x2-cell block; placeholders stay zero."""
        b, h, w, d = x.shape
        groups, new_vis = vis.merge_groups()
        gathered = gather_rows(flatten_grid(x), groups.reshape(-1))
        merged = self.proj(self.norm(reshape(gathered, (b, groups.shape[0], 4 * d))))
        new_h, new_w = h // 2, w // 2
        positions = np.flatnonzero(new_vis.mask.reshape(-1))
        return scatter_to_grid(merged, positions, new_h, new_w), new_vis
