"""Images <-> patch tokens, compact-image composition, reconstruction targets.

Images are channel-major float arrays [3, H, W] with values in [0, 1]; H and W
must be divisible by 2 * patch_size so the patch grid tiles into 2x2 cells.
Patch tokens flatten each patch channel-major: dim = 3 * P * P.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .masking import CompactMap, MaskPlan, PatchGrid
from .netpbm import read_p6, write_p6


class PatchIOError(ValueError):
    """Image/grid extent mismatches."""


def check_image(img: np.ndarray, patch_size: int = 16) -> None:
    if img.ndim != 3 or img.shape[0] != 3:
        raise PatchIOError(f"expected channel-major [3, H, W], got {img.shape}")
    _, h, w = img.shape
    unit = 2 * patch_size
    if h % unit or w % unit:
        raise PatchIOError(f"extents {h}x{w} must be divisible by 2*patch_size={unit}")


def grid_for_image(img: np.ndarray, patch_size: int = 16) -> PatchGrid:
    check_image(img, patch_size)
    return PatchGrid(img.shape[1] // patch_size, img.shape[2] // patch_size, patch_size)


def patchify(img: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """[3, H, W] -> [N, 3*P*P] raster-ordered non-overlapping patches."""
    p = grid.patch_size
    if img.shape != (3, grid.rows * p, grid.cols * p):
        raise PatchIOError(f"image {img.shape} does not match grid {grid.rows}x{grid.cols} (P={p})")
    x = img.reshape(3, grid.rows, p, grid.cols, p)
    x = x.transpose(1, 3, 0, 2, 4)                      # [gr, gc, 3, P, P]
    return np.ascontiguousarray(x.reshape(grid.num_patches, 3 * p * p))


def unpatchify(tokens: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Exact inverse of patchify."""
    p = grid.patch_size
    if tokens.shape != (grid.num_patches, 3 * p * p):
        raise PatchIOError(f"tokens {tokens.shape} do not match grid")
    x = tokens.reshape(grid.rows, grid.cols, 3, p, p)
    x = x.transpose(2, 0, 3, 1, 4)                      # [3, gr, P, gc, P]
    return np.ascontiguousarray(x.reshape(3, grid.rows * p, grid.cols * p))


def compose_compact_image(img: np.ndarray, plan: MaskPlan, cmap: CompactMap) -> np.ndarray:
    """Pack the kept patch of each 2x2 cell into a half-extent image.

    The patch at compact cell (i, j) is the kept patch of full cell (i, j),
    so the compact pixel area is a quarter of the original.
    """
    grid = plan.grid
    if cmap.compact_rows != grid.cell_rows or cmap.compact_cols != grid.cell_cols:
        raise PatchIOError("compact map does not match the plan's grid")
    tokens = patchify(img, grid)
    compact_tokens = tokens[list(cmap.to_compact)]
    p = grid.patch_size
    x = compact_tokens.reshape(cmap.compact_rows, cmap.compact_cols, 3, p, p)
    x = x.transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(x.reshape(3, cmap.compact_rows * p, cmap.compact_cols * p))


@dataclass(frozen=True)
class ReconTarget:
    """Per-patch standardized pixel vectors over the loss-support patches."""

    indices: tuple[int, ...]       # patch indices the targets cover
    targets: np.ndarray            # [len(indices), 3*P*P], ~zero mean / unit var
    mean: np.ndarray               # [len(indices)] recorded per-patch means
    var: np.ndarray                # [len(indices)] recorded per-patch variances
    eps: float


def normalize_targets(tokens: np.ndarray, support, eps: float = 1e-6) -> ReconTarget:
    """Standardize each support patch independently: (x - mean) / sqrt(var + eps)."""
    idx = tuple(int(i) for i in support)
    n = tokens.shape[0]
    if any(i < 0 or i >= n for i in idx):
        raise PatchIOError("support index outside the patch grid")
    sel = tokens[list(idx)]
    mean = sel.mean(axis=1)
    var = sel.var(axis=1)
    targets = (sel - mean[:, None]) / np.sqrt(var + eps)[:, None]
    return ReconTarget(idx, targets, mean, var, eps)


def denormalize_patch(vec: np.ndarray, mean: float, var: float, eps: float = 1e-6) -> np.ndarray:
    return vec * np.sqrt(var + eps) + mean


# ---------------------------------------------------------------------------
# 8-bit file I/O

def to_uint8(img: np.ndarray) -> np.ndarray:
    """[3, H, W] floats in [0, 1] -> interleaved uint8 [H, W, 3]."""
    clipped = np.clip(img, 0.0, 1.0)
    return np.round(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    """Interleaved uint8 [H, W, 3] -> channel-major floats in [0, 1]."""
    return pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def emit_ppm(img: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(write_p6(to_uint8(img)))


def read_ppm(path: str | Path) -> np.ndarray:
    return from_uint8(read_p6(Path(path).read_bytes()))
