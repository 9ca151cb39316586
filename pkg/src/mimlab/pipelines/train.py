"""Pretraining loop: decoupled-weight-decay Adam, cosine schedule with
linear warmup, fresh mask plan per step, deterministic stream derivation,
and resumable checkpoints carrying optimizer state."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..masking import sample_plan
from ..numerics import Parameter
from ..rng import derive_seed, np_stream
from .checkpoint import CheckpointError, load_checkpoint, model_tensors, restore_model_tensors, save_checkpoint
from .data import Corpus, random_resized_crop
from .models import ModelSpec, build_model


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 8
    accum_steps: int = 1
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    adam_eps: float = 1e-8
    warmup_frac: float = 0.1          # linear warmup over 10% of the epochs
    strategy: str = "um"
    mask_ratio: float = 0.75
    sm_ratio: float = 0.25
    seed: int = 0
    lr_scale_ref: int = 256           # peak lr = base_lr * global_batch / 256

    def peak_lr(self) -> float:
        global_batch = self.batch_size * self.accum_steps
        return self.base_lr * global_batch / self.lr_scale_ref

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["betas"] = list(self.betas)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "betas" in doc:
            doc["betas"] = tuple(doc["betas"])
        return cls(**doc)


def lr_at(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warmup to `peak`, then cosine decay to 0; continuous at the joint."""
    if total_steps <= 0:
        return peak
    if warmup_steps > 0 and step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def wants_decay(name: str, p: Parameter) -> bool:
    # matrices decay; biases, norm affines, and shared tokens do not
    return p.data.ndim >= 2


def adamw_step(params: list[tuple[str, Parameter]], grads: dict[str, np.ndarray],
               state: AdamWState, t: int, lr: float, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update with bias correction at step t."""
    b1, b2 = cfg.betas
    for name, p in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise TrainingError(f"gradient shape mismatch for {name}")
        g = g.astype(np.float64)
        m = state.m.setdefault(name, np.zeros_like(p.data, dtype=np.float64))
        v = state.v.setdefault(name, np.zeros_like(p.data, dtype=np.float64))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        update = m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        new = p.data.astype(np.float64)
        if cfg.weight_decay and wants_decay(name, p):
            new = new - lr * cfg.weight_decay * new
        new = new - lr * update
        p.data = new.astype(p.data.dtype)
    state.step = t


# ---------------------------------------------------------------------------
# training loop

@dataclass
class CurveRow:
    step: int
    epoch: int
    lr: float
    loss: float


def curve_to_csv(rows: list[CurveRow]) -> str:
    lines = ["step,epoch,lr,loss"]
    for r in rows:
        lines.append(f"{r.step},{r.epoch},{r.lr:.10g},{r.loss:.10g}")
    return "\n".join(lines) + "\n"


def train(spec: ModelSpec, corpus: Corpus, cfg: TrainConfig,
          out_ckpt: str | Path | None = None,
          resume_from: str | Path | None = None,
          stop_after_steps: int | None = None,
          epoch_callback=None) -> tuple[object, list[CurveRow]]:
    """Run the pretraining loop; returns (model, loss-curve rows).

    A fresh mask plan is drawn per optimizer step (shared across the batch),
    images get a random-resized-crop, and every random draw derives from
    (cfg.seed, step), so a resumed run replays an uninterrupted one exactly.
    `stop_after_steps` interrupts the schedule early (for later resumption);
    the lr schedule always spans the full configured run.
    """
    grid_rows, grid_cols = spec.grid_rows, spec.grid_cols
    model = build_model(spec, seed=cfg.seed)
    state = AdamWState()
    start_step = 0
    if resume_from is not None:
        header, tensors = load_checkpoint(resume_from)
        if header["model"] != spec.to_dict():
            raise CheckpointError("checkpoint model spec does not match")
        params = {n for n, _ in model.named_parameters()}
        restore_model_tensors(model, {k: v for k, v in tensors.items() if k in params})
        for k, arr in tensors.items():
            if k.startswith("opt.m."):
                state.m[k[len("opt.m."):]] = arr.astype(np.float64)
            elif k.startswith("opt.v."):
                state.v[k[len("opt.v."):]] = arr.astype(np.float64)
        start_step = int(header["train"]["step"])
        state.step = start_step

    params = list(model.named_parameters())
    steps_per_epoch = max(1, math.ceil(len(corpus) / cfg.batch_size))
    micro_steps_per_epoch = steps_per_epoch * cfg.accum_steps
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = int(round(cfg.warmup_frac * cfg.epochs)) * steps_per_epoch
    peak = cfg.peak_lr()
    image_size = (grid_rows * spec.patch_size, grid_cols * spec.patch_size)

    end_step = total_steps if stop_after_steps is None else min(total_steps, stop_after_steps)
    rows: list[CurveRow] = []
    epoch_losses: dict[int, list[float]] = {}
    for step in range(start_step, end_step):
        epoch = step // steps_per_epoch
        lr = lr_at(step, total_steps, warmup_steps, peak)
        grads: dict[str, np.ndarray] = {}
        step_loss = 0.0
        for micro in range(cfg.accum_steps):
            micro_index = step * cfg.accum_steps + micro
            plan = sample_plan(
                model.grid, cfg.strategy,
                seed=derive_seed(cfg.seed, "plan", micro_index),
                mask_ratio=cfg.mask_ratio, sm_ratio=cfg.sm_ratio,
            )
            order = corpus.epoch_order(cfg.seed, epoch)
            base = (micro_index % micro_steps_per_epoch) * cfg.batch_size
            picks = [order[(base + i) % len(corpus)] for i in range(cfg.batch_size)]
            crop_rng = np_stream(cfg.seed, "crop", micro_index)
            batch = np.stack([
                random_resized_crop(corpus.images[j], image_size[0], crop_rng)
                for j in picks
            ])
            report = model.forward_loss(batch, plan)
            if not np.isfinite(report.total):
                dump = {
                    "step": step, "micro": micro, "loss": report.total,
                    "plan_seed": plan.seed, "picks": [int(j) for j in picks],
                }
                raise TrainingError(f"non-finite loss; diagnostics: {json.dumps(dump)}")
            expected = (len(plan.kept) if spec.pipeline == "ummae"
                        else model.grid.num_patches)
            if model.last_encoder_patches != expected:
                raise TrainingError(
                    f"encoder consumed {model.last_encoder_patches} patches, "
                    f"expected {expected}")
            model.zero_grad()
            report.loss.backward()
            for name, p in params:
                if p.grad is not None:
                    acc = grads.get(name)
                    grads[name] = p.grad.copy() if acc is None else acc + p.grad
            step_loss += report.total
        if cfg.accum_steps > 1:
            for name in grads:
                grads[name] = grads[name] / cfg.accum_steps
        step_loss /= cfg.accum_steps
        adamw_step(params, grads, state, step + 1, lr, cfg)
        rows.append(CurveRow(step, epoch, lr, step_loss))
        epoch_losses.setdefault(epoch, []).append(step_loss)
        if epoch_callback is not None and (step + 1) % steps_per_epoch == 0:
            epoch_callback(epoch, float(np.mean(epoch_losses[epoch])))

    if out_ckpt is not None:
        save_model_checkpoint(out_ckpt, model, spec, cfg, state, end_step)
    return model, rows


def save_model_checkpoint(path, model, spec: ModelSpec, cfg: TrainConfig,
                          state: AdamWState, step: int) -> None:
    tensors = model_tensors(model)
    for name, arr in state.m.items():
        tensors[f"opt.m.{name}"] = arr
    for name, arr in state.v.items():
        tensors[f"opt.v.{name}"] = arr
    header = {
        "model": spec.to_dict(),
        "train_config": cfg.to_dict(),
        "train": {"step": step, "master_seed": cfg.seed},
        "prng_state": {"kind": "derived", "seed": cfg.seed, "step": step},
    }
    save_checkpoint(path, header, tensors)


def epoch_mean_losses(rows: list[CurveRow]) -> list[float]:
    by_epoch: dict[int, list[float]] = {}
    for r in rows:
        by_epoch.setdefault(r.epoch, []).append(r.loss)
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]
