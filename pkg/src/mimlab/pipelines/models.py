"""End-to-end pretraining models.

UMMAEModel: compact input -> pyramid encoder -> pixel-shuffle resolution
recovery -> full-grid decoder with mask tokens -> per-patch pixel MSE on
the dropped patches.

SimMIMBaselineModel: full-size input with the encoder-level mask token at
every non-kept patch -> same pyramid encoder family (full-space windows) ->
pixel-shuffle -> linear head, no decoder. Default target matches UM-MAE's
normalized-pixel MSE so the comparison isolates the architecture; the
l1_raw flag restores the raw-pixel L1 recipe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..decoder import DecoderConfig, DecoderError, LossReport, MAEDecoder, MaskTokenParams, masked_mse
from ..encoders import (
    MiniPVTConfig,
    MiniSwinConfig,
    PVTEncoder,
    SwinEncoder,
    validate_pvt_geometry,
    validate_swin_geometry,
)
from ..masking import CompactMap, MaskPlan, PatchGrid, build_compact_map
from ..nn import Linear, Module, Parameter, sincos_pos_embed_2d
from ..numerics import Tensor, absolute, broadcast_to, pixel_shuffle, reshape, square, tmean, transpose
from ..patchio import normalize_targets, patchify
from ..rng import np_stream


class ModelError(ValueError):
    pass


def micro_tokens(images: np.ndarray, px: int) -> np.ndarray:
    """[B, 3, H, W] -> [B, (H/px)*(W/px), 3*px*px] raster micro-patches."""
    b, c, h, w = images.shape
    t = images.reshape(b, c, h // px, px, w // px, px)
    t = t.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(t.reshape(b, (h // px) * (w // px), c * px * px))


class PatchEmbed(Module):
    def __init__(self, px: int, dim: int, rng, dtype):
        self.px = px
        self.proj = Linear(3 * px * px, dim, rng, dtype=dtype)

    def __call__(self, images: np.ndarray, dtype) -> Tensor:
        toks = micro_tokens(images, self.px).astype(dtype)
        return self.proj(Tensor(toks))


def _shuffle_to_tokens(grid_out: Tensor) -> Tensor:
    """[B, H, W, C] -> pixel-shuffle(r=2) -> [B, 4*H*W, C/4] raster tokens."""
    b, h, w, c = grid_out.shape
    chw = transpose(grid_out, (0, 3, 1, 2))
    up = pixel_shuffle(chw, 2)                       # [B, C/4, 2H, 2W]
    back = transpose(up, (0, 2, 3, 1))               # [B, 2H, 2W, C/4]
    return reshape(back, (b, 4 * h * w, c // 4))


@dataclass
class ModelSpec:
    """Everything needed to rebuild a model; serialized into checkpoints."""

    arch: str                      # "pvt" | "swin"
    pipeline: str                  # "ummae" | "simmim"
    grid_rows: int
    grid_cols: int
    patch_size: int = 16
    encoder: dict[str, Any] = field(default_factory=dict)
    decoder: dict[str, Any] = field(default_factory=dict)
    loss_includes_sm: bool = False
    simmim_l1: bool = False
    dtype: str = "f32"

    def to_dict(self) -> dict:
        return {
            "arch": self.arch, "pipeline": self.pipeline,
            "grid_rows": self.grid_rows, "grid_cols": self.grid_cols,
            "patch_size": self.patch_size,
            "encoder": dict(self.encoder), "decoder": dict(self.decoder),
            "loss_includes_sm": self.loss_includes_sm,
            "simmim_l1": self.simmim_l1, "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        return cls(**doc)


def _encoder_config(spec: ModelSpec):
    enc = dict(spec.encoder)
    for key in ("depths", "dims", "heads", "sr_full"):
        if key in enc:
            enc[key] = tuple(enc[key])
    if spec.arch == "pvt":
        return MiniPVTConfig(**enc)
    if spec.arch == "swin":
        if "rel_bias" not in enc:
            enc["rel_bias"] = "compact" if spec.pipeline == "ummae" else "full-space"
        return MiniSwinConfig(**enc)
    raise ModelError(f"unknown architecture {spec.arch!r}")


def validate_spec_geometry(spec: ModelSpec) -> list[str]:
    cfg = _encoder_config(spec)
    px = cfg.patch_px
    scale = spec.patch_size // px
    full_tokens = (spec.grid_rows * scale, spec.grid_cols * scale)
    if spec.patch_size % px:
        return [f"patch_size {spec.patch_size} not divisible by token edge {px}"]
    if spec.arch == "pvt":
        return validate_pvt_geometry(cfg, full_tokens)
    return validate_swin_geometry(cfg, full_tokens)


class _PretrainModel(Module):
    """Shared construction: patch embedding, encoder, counters."""

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.grid = PatchGrid(spec.grid_rows, spec.grid_cols, spec.patch_size)
        self.enc_cfg = _encoder_config(spec)
        problems = validate_spec_geometry(spec)
        if problems:
            raise ModelError("invalid geometry: " + "; ".join(problems))
        dtype = np.float32 if spec.dtype == "f32" else np.float64
        self.np_dtype = dtype
        rng = np_stream(seed, "init", spec.pipeline, spec.arch)
        self.patch_embed = PatchEmbed(self.enc_cfg.patch_px, self.enc_cfg.dims[0], rng, dtype)
        if spec.arch == "pvt":
            self.encoder = PVTEncoder(self.enc_cfg, rng, dtype=dtype)
        else:
            self.encoder = SwinEncoder(self.enc_cfg, rng, dtype=dtype)
        self._init_rng = rng
        self.last_encoder_patches: int | None = None  # step instrumentation

    @property
    def patch_dim(self) -> int:
        return 3 * self.spec.patch_size ** 2

    def _tokens_per_patch_edge(self) -> int:
        return self.spec.patch_size // self.enc_cfg.patch_px

    def _input_pos_embed(self, token_rows: int, token_cols: int) -> np.ndarray | None:
        if self.spec.arch == "pvt" and self.enc_cfg.use_pos_embed:
            return sincos_pos_embed_2d(token_rows, token_cols,
                                       self.enc_cfg.dims[0], dtype=self.np_dtype)
        return None  # Swin carries relative bias inside its blocks instead


class UMMAEModel(_PretrainModel):
    def __init__(self, spec: ModelSpec, seed: int = 0):
        if spec.pipeline != "ummae":
            raise ModelError("spec.pipeline must be 'ummae'")
        super().__init__(spec, seed)
        dec_cfg = DecoderConfig(**spec.decoder)
        enc_final = self.enc_cfg.dims[-1]
        if enc_final % 4:
            raise ModelError("final encoder dim must divide by 4 for the r=2 shuffle")
        rng = self._init_rng
        self.mask_tokens = MaskTokenParams(self.enc_cfg.dims[0], dec_cfg.dim, rng,
                                           dtype=self.np_dtype)
        self.decoder = MAEDecoder(dec_cfg, spec.grid_rows, spec.grid_cols,
                                  self.patch_dim, enc_final // 4, rng, dtype=self.np_dtype)
        self.bind_names()

    # -- encoder side --------------------------------------------------------
    def encode_compact(self, compact_images: np.ndarray, plan: MaskPlan,
                       cmap: CompactMap) -> Tensor:
        """[B, 3, H/2, W/2] compact images -> [B, |kept|, final_dim/4] tokens."""
        b = compact_images.shape[0]
        k = self._tokens_per_patch_edge()
        t_rows = cmap.compact_rows * k
        t_cols = cmap.compact_cols * k
        emb = self.patch_embed(compact_images, self.np_dtype)     # [B, T, D]

        if plan.sm_masked:
            # secondary-masked patches enter as the shared token, at embed level
            sm_flags = np.zeros((t_rows, t_cols), dtype=bool)
            for p in plan.sm_masked:
                ci, cj = divmod(cmap.to_full[p], cmap.compact_cols)
                sm_flags[ci * k:(ci + 1) * k, cj * k:(cj + 1) * k] = True
            sm_vec = sm_flags.reshape(1, -1, 1).astype(self.np_dtype)
            keep_vec = Tensor(1.0 - sm_vec)
            token = broadcast_to(reshape(self.mask_tokens.encoder_sm_token,
                                         (1, 1, self.enc_cfg.dims[0])),
                                 (b, t_rows * t_cols, self.enc_cfg.dims[0]))
            emb = emb * keep_vec + token * Tensor(sm_vec)

        pos = self._input_pos_embed(t_rows, t_cols)
        if pos is not None:
            emb = emb + Tensor(pos)
        grid_in = reshape(emb, (b, t_rows, t_cols, self.enc_cfg.dims[0]))
        out, _ = self.encoder.forward_compact(grid_in)
        tokens = _shuffle_to_tokens(out)                          # [B, |kept|, final/4]
        self.last_encoder_patches = len(plan.kept)
        return tokens

    # -- full objective --------------------------------------------------------
    def loss_support(self, plan: MaskPlan) -> tuple[int, ...]:
        if self.spec.loss_includes_sm:
            return tuple(sorted(set(plan.dropped) | set(plan.sm_masked)))
        return plan.dropped

    def forward_loss(self, images: np.ndarray, plan: MaskPlan) -> LossReport:
        """images: [B, 3, H, W] in [0, 1]; the plan is shared across the batch."""
        if plan.strategy not in ("US", "UM", "GS"):
            raise ModelError(f"compact pipeline cannot consume {plan.strategy} plans")
        from ..patchio import compose_compact_image

        cmap = build_compact_map(plan)
        support = self.loss_support(plan)
        compacts = np.stack([compose_compact_image(img, plan, cmap) for img in images])
        targets = np.stack([
            normalize_targets(patchify(img, self.grid), support).targets for img in images
        ])
        encoded = self.encode_compact(compacts, plan, cmap)
        assembled = self.decoder.assemble_full_tokens(
            encoded, cmap, self.mask_tokens.decoder_mask_token)
        pred = self.decoder.predict_pixels(self.decoder.decode(assembled))
        return masked_mse(pred, targets.astype(self.np_dtype), support)

    def predict_patches(self, image: np.ndarray, plan: MaskPlan) -> np.ndarray:
        """Per-patch predictions in normalized space, [N, patch_dim] (viz path)."""
        cmap = build_compact_map(plan)
        from ..patchio import compose_compact_image

        compact = compose_compact_image(image, plan, cmap)[None]
        encoded = self.encode_compact(compact, plan, cmap)
        assembled = self.decoder.assemble_full_tokens(
            encoded, cmap, self.mask_tokens.decoder_mask_token)
        pred = self.decoder.predict_pixels(self.decoder.decode(assembled))
        return pred.data[0]


class SimMIMBaselineModel(_PretrainModel):
    """Full-grid encoder with mask tokens; linear reconstruction head."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        if spec.pipeline != "simmim":
            raise ModelError("spec.pipeline must be 'simmim'")
        super().__init__(spec, seed)
        rng = self._init_rng
        self.mask_token = Parameter(
            rng.normal(0.0, 0.02, (self.enc_cfg.dims[0],)).astype(self.np_dtype))
        enc_final = self.enc_cfg.dims[-1]
        if enc_final % 4:
            raise ModelError("final encoder dim must divide by 4 for the r=2 shuffle")
        self.head = Linear(enc_final // 4, self.patch_dim, rng, dtype=self.np_dtype)
        self.bind_names()

    def encode_full(self, images: np.ndarray, plan: MaskPlan) -> Tensor:
        """Full-size input; every non-kept patch embeds as the mask token."""
        b = images.shape[0]
        k = self._tokens_per_patch_edge()
        t_rows = self.grid.rows * k
        t_cols = self.grid.cols * k
        emb = self.patch_embed(images, self.np_dtype)

        masked_flags = np.ones((self.grid.rows, self.grid.cols), dtype=bool)
        for p in plan.kept:
            masked_flags[divmod(p, self.grid.cols)] = False
        fine = np.kron(masked_flags, np.ones((k, k), dtype=bool))
        m_vec = fine.reshape(1, -1, 1).astype(self.np_dtype)
        token = broadcast_to(reshape(self.mask_token, (1, 1, self.enc_cfg.dims[0])),
                             (b, t_rows * t_cols, self.enc_cfg.dims[0]))
        emb = emb * Tensor(1.0 - m_vec) + token * Tensor(m_vec)

        pos = self._input_pos_embed(t_rows, t_cols)
        if pos is not None:
            emb = emb + Tensor(pos)
        grid_in = reshape(emb, (b, t_rows, t_cols, self.enc_cfg.dims[0]))
        out, _ = self.encoder.forward_full(grid_in)
        self.last_encoder_patches = self.grid.num_patches
        return _shuffle_to_tokens(out)                             # [B, N, final/4]

    def forward_loss(self, images: np.ndarray, plan: MaskPlan) -> LossReport:
        support = plan.dropped
        if not support:
            raise DecoderError("empty loss support")
        pred = self.head(self.encode_full(images, plan))
        if self.spec.simmim_l1:
            raw = np.stack([patchify(img, self.grid)[list(support)] for img in images])
            idx_pred = pred
            from ..numerics import gather_rows

            picked = gather_rows(idx_pred, np.asarray(support, dtype=np.int64))
            err = absolute(picked - Tensor(raw.astype(self.np_dtype)))
            per_patch = tmean(err, axis=-1)
            loss = tmean(per_patch)
            return LossReport(loss.item(), per_patch.data.copy(), len(support), loss)
        targets = np.stack([
            normalize_targets(patchify(img, self.grid), support).targets for img in images
        ])
        return masked_mse(pred, targets.astype(self.np_dtype), support)

    def predict_patches(self, image: np.ndarray, plan: MaskPlan) -> np.ndarray:
        pred = self.head(self.encode_full(image[None], plan))
        return pred.data[0]


def build_model(spec: ModelSpec, seed: int = 0):
    if spec.pipeline == "ummae":
        return UMMAEModel(spec, seed)
    if spec.pipeline == "simmim":
        return SimMIMBaselineModel(spec, seed)
    raise ModelError(f"unknown pipeline {spec.pipeline!r}")


def default_spec(arch: str, pipeline: str, grid_rows: int = 16, grid_cols: int = 16,
                 micro: bool = False, **overrides) -> ModelSpec:
    """Reference desk-scale configurations.

    micro=True shrinks every width for smoke tests and ablation sweeps.
    """
    if arch == "pvt":
        encoder = {
            "depths": [1, 1, 1, 1],
            "dims": [16, 32, 64, 128] if micro else [32, 64, 128, 256],
            "heads": [1, 2, 4, 8],
            "sr_full": [8, 4, 2, 1],
        }
    elif arch == "swin":
        encoder = {
            "depths": [2, 2, 2, 2],
            "dims": [16, 32, 64, 128] if micro else [32, 64, 128, 256],
            "heads": [1, 2, 4, 8],
            "window": 16,
        }
    else:
        raise ModelError(f"unknown architecture {arch!r}")
    decoder = {"depth": 2, "dim": 32 if micro else 64, "heads": 4}
    spec = ModelSpec(arch=arch, pipeline=pipeline, grid_rows=grid_rows,
                     grid_cols=grid_cols, encoder=encoder, decoder=decoder)
    for key, value in overrides.items():
        setattr(spec, key, value)
    return spec
