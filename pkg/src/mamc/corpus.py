"""Bundled synthetic toy corpus.

Stand-in for the paper-scale art datasets: procedurally generated 64x64
"artworks" (smooth color gradients overlaid with simple shapes and
stripes). Generation is a pure function of (index, seed), so the corpus
never needs to ship as binary assets.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from mamc.imagecore import CANONICAL_RESOLUTION, save_image


def synth_image(index: int, seed: int = 0, resolution: int = CANONICAL_RESOLUTION) -> torch.Tensor:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    h = w = resolution
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    yy /= h - 1
    xx /= w - 1

    # Smooth background: random linear + sinusoidal gradient per channel.
    img = np.zeros((h, w, 3), dtype=np.float32)
    for c in range(3):
        a, b = rng.uniform(-1, 1, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        freq = rng.uniform(0.5, 3.0)
        base = rng.uniform(0.2, 0.8)
        img[:, :, c] = base + 0.25 * (a * xx + b * yy) + 0.15 * np.sin(
            freq * np.pi * (xx + yy) + phase
        )

    # A few solid shapes in random colors.
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.1, 0.9, size=3).astype(np.float32)
        kind = rng.integers(0, 3)
        if kind == 0:  # disc
            cy, cx = rng.uniform(0.15, 0.85, size=2)
            r = rng.uniform(0.08, 0.25)
            sel = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        elif kind == 1:  # rectangle
            y0, x0 = rng.uniform(0.0, 0.6, size=2)
            dy, dx = rng.uniform(0.15, 0.4, size=2)
            sel = (yy >= y0) & (yy < y0 + dy) & (xx >= x0) & (xx < x0 + dx)
        else:  # diagonal stripe
            off = rng.uniform(-0.5, 1.0)
            width = rng.uniform(0.05, 0.15)
            sel = np.abs(xx - yy - off) < width
        img[sel] = 0.7 * color + 0.3 * img[sel]

    # Brushwork-like texture: fine oriented stripes plus seeded grain, so
    # the corpus carries real high-frequency content.
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(8.0, 24.0)
    phase = rng.uniform(0, 2 * np.pi)
    stripes = np.sin(freq * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    img += rng.uniform(0.03, 0.10) * stripes[:, :, None]
    img += rng.uniform(0.01, 0.04) * rng.standard_normal((h, w, 1)).astype(np.float32)

    return torch.from_numpy(np.clip(img, 0.0, 1.0))


def toy_corpus(count: int, seed: int = 0, resolution: int = CANONICAL_RESOLUTION) -> dict[str, torch.Tensor]:
    """In-memory corpus: identifier -> ImageTensor."""
    return {f"toy_{i:04d}.png": synth_image(i, seed=seed, resolution=resolution) for i in range(count)}


def write_toy_corpus(directory, count: int, seed: int = 0,
                     resolution: int = CANONICAL_RESOLUTION) -> list[str]:
    """Materialize the toy corpus as PNGs; returns identifiers."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        name = f"toy_{i:04d}.png"
        save_image(synth_image(i, seed=seed, resolution=resolution), directory / name)
        ids.append(name)
    return ids
