"""Seeded two-class texture corpus for desk-scale runs.

Both classes are blob texture overlaid with an oriented grating. The grating contrast
distributions of the two classes overlap, so no threshold separates them perfectly and
the class prior seen in training moves the decision boundary. Every image also gets
its own focus blur, sensor noise level and exposure, covering the range of the blur,
noise and brightness changes the minority synthesizer applies; without that spread a
classifier can score synthetic-looking noise instead of texture.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data_io import Dataset, LabeledSample, save_image
from .diffusion import gaussian_blur

CONTRAST = {0: (0.0, 0.08), 1: (0.05, 0.15)}


def texture(label: int, size: int, rng) -> np.ndarray:
    """One (3, size, size) image in [0, 1]."""
    base = gaussian_blur(rng.standard_normal((1, size, size)), 2.0)[0]
    base = (base - base.mean()) / (base.std() + 1e-12)
    yy, xx = np.mgrid[0:size, 0:size]
    angle = rng.uniform(0, np.pi)
    period = rng.uniform(10, 16)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(*CONTRAST[label])
    grating = np.sin(2 * np.pi * (np.cos(angle) * xx + np.sin(angle) * yy) / period + phase)
    noise = rng.uniform(0.02, 0.25) * rng.standard_normal((size, size))
    # smoothing acts on the recorded image, noise included
    img = gaussian_blur(0.5 + 0.12 * base + amp * grating + noise, rng.uniform(0.0, 1.0))
    img = rng.uniform(0.85, 1.15) * img
    return np.repeat(np.clip(img, 0, 1)[None], 3, axis=0)


def make_corpus(n0: int, n1: int, size: int = 64, seed: int = 0, prefix: str = "img") -> Dataset:
    """``n0`` class-0 and ``n1`` class-1 textures; each image has its own seeded generator."""
    samples = []
    for label, n in ((0, n0), (1, n1)):
        for i in range(n):
            rng = np.random.default_rng([seed, label, i])
            samples.append(LabeledSample(texture(label, size, rng), label, "real", f"{label}/{prefix}_{i:05d}.png"))
    return Dataset(samples)


def write_corpus(root, d: Dataset) -> None:
    """Write ``root/<label>/<name>.png`` so the corpus can be reloaded with ``load_dataset``."""
    root = Path(root)
    for s in d.samples:
        path = root / s.source_id
        path.parent.mkdir(parents=True, exist_ok=True)
        save_image(path, s.image)
        s.meta["path"] = str(path.resolve())
