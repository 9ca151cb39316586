"""Mask-plan generation on a patch grid.

Four sampling strategies over the H/P x W/P patch grid:

  RS  random subset (MAE-style, default 75% masked)
  GS  fixed lattice: top-left corner of every 2x2 cell
  US  one uniformly random patch kept per 2x2 cell (25% kept)
  UM  US followed by a secondary random mask over the kept patches

US/UM plans keep exactly one patch per 2x2 cell, which is what lets the
kept patches be reorganized as a compact half-resolution grid: compact
position (i, j) holds the kept patch of cell (i, j).

All index spaces are raster (row-major). Plans are pure functions of
(grid, ratios, seed); the sampling and secondary-mask draws use distinct
derived streams so changing sm_ratio never perturbs the US draw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .rng import SplitMix64, derive_seed

STRATEGIES = ("RS", "GS", "US", "UM")

# cell-uniqueness strategies: one kept patch per 2x2 cell
ONE_PER_CELL = ("GS", "US", "UM")


class MaskingError(ValueError):
    """Invalid grid geometry or strategy misuse."""


@dataclass(frozen=True)
class PatchGrid:
    """Patch-count geometry of an image: rows x cols patches of patch_size px."""

    rows: int
    cols: int
    patch_size: int = 16

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.patch_size <= 0:
            raise MaskingError("grid extents must be positive")
        if self.rows % 2 or self.cols % 2:
            raise MaskingError(
                f"grid must have even extents for 2x2 cell tiling, got {self.rows}x{self.cols}"
            )

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    @property
    def cell_rows(self) -> int:
        return self.rows // 2

    @property
    def cell_cols(self) -> int:
        return self.cols // 2

    def cell_of(self, index: int) -> int:
        """Raster index of the 2x2 cell containing patch `index`."""
        r, c = divmod(index, self.cols)
        return (r // 2) * self.cell_cols + (c // 2)

    def cell_members(self, cell: int) -> list[int]:
        ci, cj = divmod(cell, self.cell_cols)
        r, c = 2 * ci, 2 * cj
        return [r * self.cols + c, r * self.cols + c + 1,
                (r + 1) * self.cols + c, (r + 1) * self.cols + c + 1]


@dataclass(frozen=True)
class MaskPlan:
    grid: PatchGrid
    kept: tuple[int, ...]            # sorted visible patch indices
    sm_masked: tuple[int, ...]       # subset of kept replaced by mask tokens
    strategy: str
    sm_ratio: float
    seed: int
    dropped: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        kept_set = set(self.kept)
        dropped = tuple(i for i in range(self.grid.num_patches) if i not in kept_set)
        object.__setattr__(self, "dropped", dropped)

    @property
    def visible(self) -> tuple[int, ...]:
        """Kept patches that still carry real pixels (kept minus sm_masked)."""
        sm = set(self.sm_masked)
        return tuple(i for i in self.kept if i not in sm)


@dataclass(frozen=True)
class CompactMap:
    """Bijection between the compact half-resolution grid and kept patches."""

    to_compact: tuple[int, ...]      # compact raster position k -> full-grid index
    to_full: dict[int, int]          # full-grid index -> compact position
    compact_rows: int
    compact_cols: int


def _round_half_up(x: float) -> int:
    # round() is banker's; subset sizes use round-half-up
    return int(x + 0.5)


def sample_random(grid: PatchGrid, mask_ratio: float = 0.75, seed: int = 0) -> MaskPlan:
    """RS: uniformly random kept subset of size round(N * (1 - mask_ratio))."""
    if not 0.0 < mask_ratio < 1.0:
        raise MaskingError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    n = grid.num_patches
    n_keep = _round_half_up(n * (1.0 - mask_ratio))
    if n_keep == 0:
        raise MaskingError(f"mask_ratio {mask_ratio} keeps 0 of {n} patches")
    rng = SplitMix64(derive_seed(seed, "sample"))
    kept = rng.sample_without_replacement(n, n_keep)
    return MaskPlan(grid, tuple(kept), (), "RS", 0.0, seed)


def sample_grid(grid: PatchGrid, seed: int = 0) -> MaskPlan:
    """GS: keep the top-left corner of every 2x2 cell. Seed accepted, unused."""
    kept = [grid.cell_members(c)[0] for c in range(grid.cell_rows * grid.cell_cols)]
    return MaskPlan(grid, tuple(sorted(kept)), (), "GS", 0.0, seed)


def sample_uniform(grid: PatchGrid, seed: int = 0) -> MaskPlan:
    """US: independently keep one of the 4 positions of every 2x2 cell."""
    rng = SplitMix64(derive_seed(seed, "sample"))
    kept = []
    for cell in range(grid.cell_rows * grid.cell_cols):
        members = grid.cell_members(cell)
        kept.append(members[rng.randint(4)])
    return MaskPlan(grid, tuple(sorted(kept)), (), "US", 0.0, seed)


def apply_secondary_mask(plan: MaskPlan, sm_ratio: float, seed: int | None = None) -> MaskPlan:
    """Promote a US plan to UM by masking round(sm_ratio * |kept|) kept patches.

    Kept/dropped are unchanged; the SM draw uses its own stream, so the same
    seed with a different sm_ratio reuses the underlying US pattern.
    """
    if plan.strategy != "US":
        raise MaskingError(f"secondary masking applies to US plans, not {plan.strategy}")
    if not 0.0 <= sm_ratio < 1.0:
        raise MaskingError(f"sm_ratio must be in [0, 1), got {sm_ratio}")
    if seed is None:
        seed = plan.seed
    n_sm = _round_half_up(sm_ratio * len(plan.kept))
    rng = SplitMix64(derive_seed(seed, "secondary"))
    picks = rng.sample_without_replacement(len(plan.kept), n_sm)
    sm = tuple(plan.kept[i] for i in picks)
    return MaskPlan(plan.grid, plan.kept, sm, "UM", sm_ratio, seed)


def sample_plan(
    grid: PatchGrid,
    strategy: str,
    seed: int = 0,
    mask_ratio: float = 0.75,
    sm_ratio: float = 0.25,
) -> MaskPlan:
    """Dispatch helper covering all four strategies."""
    s = strategy.upper()
    if s == "RS":
        return sample_random(grid, mask_ratio, seed)
    if s == "GS":
        return sample_grid(grid, seed)
    if s == "US":
        return sample_uniform(grid, seed)
    if s == "UM":
        return apply_secondary_mask(sample_uniform(grid, seed), sm_ratio, seed)
    raise MaskingError(f"unknown strategy {strategy!r}")


def build_compact_map(plan: MaskPlan) -> CompactMap:
    """Map compact position (i, j) to the kept patch of full cell (i, j)."""
    if plan.strategy not in ONE_PER_CELL:
        raise MaskingError(f"{plan.strategy} plans have no compact reorganization")
    grid = plan.grid
    per_cell: dict[int, int] = {}
    for idx in plan.kept:
        cell = grid.cell_of(idx)
        if cell in per_cell:
            raise MaskingError(f"cell {cell} holds more than one kept patch")
        per_cell[cell] = idx
    n_cells = grid.cell_rows * grid.cell_cols
    if len(per_cell) != n_cells:
        missing = [c for c in range(n_cells) if c not in per_cell]
        raise MaskingError(f"cells without a kept patch: {missing[:8]}")
    to_compact = tuple(per_cell[c] for c in range(n_cells))
    to_full = {idx: k for k, idx in enumerate(to_compact)}
    return CompactMap(to_compact, to_full, grid.cell_rows, grid.cell_cols)


def validate_plan(plan: MaskPlan) -> list[str]:
    """All MaskPlan invariants as data; empty list means the plan is sound."""
    v: list[str] = []
    grid = plan.grid
    n = grid.num_patches
    kept = set(plan.kept)
    dropped = set(plan.dropped)

    if kept & dropped:
        v.append(f"kept-dropped-overlap: {sorted(kept & dropped)[:8]}")
    if kept | dropped != set(range(n)):
        v.append("kept-dropped-cover: union misses indices")
    if any(i < 0 or i >= n for i in kept):
        v.append("kept-range: index outside grid")
    if plan.strategy not in STRATEGIES:
        v.append(f"strategy: unknown {plan.strategy!r}")

    if plan.strategy in ONE_PER_CELL:
        if len(kept) != n // 4:
            v.append(f"kept-count: {len(kept)} != N/4 = {n // 4}")
        counts: dict[int, list[int]] = {}
        for idx in plan.kept:
            counts.setdefault(grid.cell_of(idx), []).append(idx)
        for cell in range(grid.cell_rows * grid.cell_cols):
            got = counts.get(cell, [])
            if len(got) != 1:
                v.append(f"cell-uniqueness: cell {cell} holds {sorted(got)}")

    sm = set(plan.sm_masked)
    if not sm <= kept:
        v.append(f"sm-subset: {sorted(sm - kept)[:8]} not kept")
    if plan.strategy == "UM":
        want = _round_half_up(plan.sm_ratio * len(plan.kept))
        if len(sm) != want:
            v.append(f"sm-count: {len(sm)} != round(sm_ratio*|kept|) = {want}")
    elif sm:
        v.append(f"sm-empty: strategy {plan.strategy} carries sm_masked")
    return v


# ---------------------------------------------------------------------------
# window statistics (why US matters for local-window operators)

def window_visible_counts(plan: MaskPlan, window_edge: int) -> list[int]:
    """Visible-patch count per non-overlapping window_edge^2 patch window."""
    grid = plan.grid
    if window_edge <= 0 or window_edge % 2:
        raise MaskingError("window edge must be even and positive")
    if grid.rows % window_edge or grid.cols % window_edge:
        raise MaskingError(f"window {window_edge} does not tile {grid.rows}x{grid.cols}")
    wr, wc = grid.rows // window_edge, grid.cols // window_edge
    counts = [0] * (wr * wc)
    for idx in plan.kept:
        r, c = divmod(idx, grid.cols)
        counts[(r // window_edge) * wc + (c // window_edge)] += 1
    return counts


# ---------------------------------------------------------------------------
# serialization

def plan_to_json(plan: MaskPlan) -> str:
    """JSON form; `dropped` is derived and never stored."""
    doc = {
        "grid": {"rows": plan.grid.rows, "cols": plan.grid.cols,
                 "patch_size": plan.grid.patch_size},
        "strategy": plan.strategy,
        "seed": plan.seed,
        "sm_ratio": plan.sm_ratio,
        "kept": list(plan.kept),
        "sm_masked": list(plan.sm_masked),
    }
    return json.dumps(doc, indent=2) + "\n"


def plan_from_json(text: str) -> MaskPlan:
    doc = json.loads(text)
    grid = PatchGrid(**doc["grid"])
    plan = MaskPlan(
        grid,
        tuple(doc["kept"]),
        tuple(doc["sm_masked"]),
        doc["strategy"],
        float(doc["sm_ratio"]),
        int(doc["seed"]),
    )
    problems = validate_plan(plan)
    if problems:
        raise MaskingError(f"stored plan is invalid: {problems}")
    return plan


def plan_to_pgm_bytes(plan: MaskPlan) -> bytes:
    """P5 visualization, one pixel per patch: kept 255, sm-masked 128, dropped 0."""
    grid = plan.grid
    levels = bytearray(grid.num_patches)
    for i in plan.kept:
        levels[i] = 255
    for i in plan.sm_masked:
        levels[i] = 128
    header = f"P5\n{grid.cols} {grid.rows}\n255\n".encode("ascii")
    return header + bytes(levels)
