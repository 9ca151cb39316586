"""Toy corpora: PPM directories, synthetic image generation, and the
random-resized-crop augmentation with bilinear resampling."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..patchio import check_image, read_ppm
from ..rng import np_stream


class CorpusError(ValueError):
    pass


class Corpus:
    """In-memory list of images with deterministic per-epoch shuffling."""

    def __init__(self, images: list[np.ndarray], patch_size: int = 16):
        if not images:
            raise CorpusError("empty corpus")
        for img in images:
            check_image(img, patch_size)
        self.images = [img.astype(np.float64) for img in images]
        self.patch_size = patch_size

    @classmethod
    def from_dir(cls, path: str | Path, patch_size: int = 16) -> "Corpus":
        files = sorted(Path(path).glob("*.ppm"))
        if not files:
            raise CorpusError(f"no .ppm files under {path}")
        return cls([read_ppm(f) for f in files], patch_size)

    def __len__(self) -> int:
        return len(self.images)

    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        rng = np_stream(seed, "shuffle", epoch)
        return rng.permutation(len(self.images))


def _smooth_field(rng, size: int, waves: int, max_freq: float, amp: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size) / size, np.arange(size) / size, indexing="ij")
    field = np.zeros((size, size))
    for _ in range(waves):
        fy, fx = rng.uniform(-max_freq, max_freq, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return amp * field


def synthesize_corpus(count: int, size: int, seed: int = 0,
                      patch_size: int = 16) -> list[np.ndarray]:
    """Structured toy images: a smooth color base plus patch-scale gratings
    whose phase drifts across the image.

    The drifting phase makes a patch recoverable from its immediate
    neighbors but not from distant context, so reconstruction difficulty
    tracks how evenly the visible patches cover the image.
    """
    images = []
    for i in range(count):
        rng = np_stream(seed, "synth", i)
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        yf, xf = yy / size, xx / size
        img = np.zeros((3, size, size))

        # smooth low-frequency base per channel
        for c in range(3):
            img[c] = rng.uniform(-0.25, 0.25) + _smooth_field(rng, size, 3, 1.5, 0.25)

        # two gratings at 1-2.5 patch wavelengths with smoothly drifting phase
        for _ in range(2):
            wavelength = rng.uniform(1.0, 2.5) * patch_size
            theta = rng.uniform(0, np.pi)
            carrier = (np.cos(theta) * yy + np.sin(theta) * xx) / wavelength
            drift = _smooth_field(rng, size, 2, 2.0, 1.0)
            envelope = 0.5 + 0.5 * np.tanh(_smooth_field(rng, size, 2, 1.5, 2.0))
            grating = np.cos(2 * np.pi * carrier + np.pi * drift) * envelope
            tint = rng.uniform(0.25, 0.6, size=3)
            img += tint[:, None, None] * grating

        # a few soft blobs for larger-scale variety
        for _ in range(2):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            radius = rng.uniform(0.1, 0.3)
            blob = np.exp(-(((yf - cy) ** 2 + (xf - cx) ** 2) / (2 * radius ** 2)))
            tint = rng.uniform(-0.5, 0.5, size=3)
            img += tint[:, None, None] * blob

        lo, hi = img.min(), img.max()
        images.append((img - lo) / (hi - lo + 1e-9))
    return images


def write_corpus(images: list[np.ndarray], path: str | Path) -> None:
    from ..patchio import emit_ppm

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        emit_ppm(img, out / f"img_{i:04d}.ppm")


# ---------------------------------------------------------------------------
# augmentation

def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channel-major bilinear resampling (half-pixel centers)."""
    _, h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def random_resized_crop(
    img: np.ndarray,
    out_size: int,
    rng: np.random.Generator,
    scale: tuple[float, float] = (0.2, 1.0),
) -> np.ndarray:
    """Square crop of a random area fraction, bilinearly resized to out_size."""
    _, h, w = img.shape
    area_frac = rng.uniform(scale[0], scale[1])
    side = max(1, int(round(np.sqrt(area_frac) * min(h, w))))
    side = min(side, h, w)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    crop = img[:, top:top + side, left:left + side]
    if side == out_size:
        return crop.copy()
    return np.clip(bilinear_resize(crop, out_size, out_size), 0.0, 1.0)
