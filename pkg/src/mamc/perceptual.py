"""Fixed perceptual feature extractor, perceptual distance, and Gram losses.

A small frozen 3-level convolutional net (channels 16/32/64, stride 2,
smooth GELU activations) stands in for a pretrained LPIPS backbone at desk
scale. Weights are seeded, frozen at build time, and shipped as a
versioned asset so every score is reproducible. The extractor is pluggable:
anything exposing ``features(nchw) -> list[Tensor]`` works in its place.
"""

from __future__ import annotations

import importlib.resources
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from mamc import container
from mamc.errors import ShapeError, SizeError
from mamc.imagecore import to_chw

EXTRACTOR_SEED = 20240817
EXTRACTOR_CHANNELS = (16, 32, 64)
_EPS = 1e-10


def generate_extractor_arrays(seed: int = EXTRACTOR_SEED,
                              channels: tuple[int, ...] = EXTRACTOR_CHANNELS) -> dict[str, np.ndarray]:
    """He-scaled random conv weights, deterministic in the seed."""
    rng = np.random.RandomState(seed)
    arrays: dict[str, np.ndarray] = {}
    c_in = 3
    for j, c_out in enumerate(channels):
        fan_in = c_in * 9
        w = rng.randn(c_out, c_in, 3, 3).astype(np.float64) * np.sqrt(2.0 / fan_in)
        b = np.zeros(c_out, dtype=np.float64)
        arrays[f"conv{j}.weight"] = w
        arrays[f"conv{j}.bias"] = b
        c_in = c_out
    return arrays


class FeatureExtractor:
    """Immutable after construction; all methods are pure."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.levels = len({k.split(".")[0] for k in arrays})
        self._weights = [
            (torch.from_numpy(arrays[f"conv{j}.weight"]), torch.from_numpy(arrays[f"conv{j}.bias"]))
            for j in range(self.levels)
        ]
        self.channels = tuple(w.shape[0] for w, _ in self._weights)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """x: (B, 3, H, W) in [0,1]. Returns post-activation maps per level,
        spatial dims halving each level."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W), got {tuple(x.shape)}")
        min_size = 2**self.levels
        if x.shape[2] < min_size or x.shape[3] < min_size:
            raise SizeError(
                f"input {x.shape[2]}x{x.shape[3]} below extractor minimum {min_size}x{min_size}"
            )
        out = []
        h = x * 2.0 - 1.0
        for w, b in self._weights:
            h = F.conv2d(h, w.to(h.dtype), b.to(h.dtype), stride=2, padding=1)
            h = F.gelu(h)
            out.append(h)
        return out


def _asset_arrays() -> dict[str, np.ndarray]:
    ref = importlib.resources.files("mamc").joinpath("assets/extractor.mamc")
    with importlib.resources.as_file(ref) as path:
        arrays, _ = container.load_container(path)
    return arrays


@lru_cache(maxsize=1)
def default_extractor() -> FeatureExtractor:
    return FeatureExtractor(_asset_arrays())


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _unit_normalize(f: torch.Tensor) -> torch.Tensor:
    # Per-location channel normalization, as in the LPIPS formulation.
    norm = torch.sqrt(torch.sum(f * f, dim=1, keepdim=True) + _EPS)
    return f / norm


def perceptual_distance_nchw(x: torch.Tensor, y: torch.Tensor,
                             extractor: FeatureExtractor | None = None) -> torch.Tensor:
    """Sum over levels of the mean squared unit-normalized feature
    difference; per-batch mean. Symmetric, non-negative, differentiable."""
    _check_pair(x, y)
    ex = extractor or default_extractor()
    fx = ex.features(x)
    fy = ex.features(y)
    total = x.new_zeros(())
    for a, b in zip(fx, fy):
        d = _unit_normalize(a) - _unit_normalize(b)
        total = total + torch.mean(d * d)
    return total


def feature_distance_nchw(x: torch.Tensor, y: torch.Tensor,
                          extractor: FeatureExtractor | None = None) -> torch.Tensor:
    """Like perceptual_distance_nchw but on raw (non-normalized) features,
    so it is sensitive to activation energy, not just direction. Used where
    the objective must be able to shift texture statistics."""
    _check_pair(x, y)
    ex = extractor or default_extractor()
    fx = ex.features(x)
    fy = ex.features(y)
    total = x.new_zeros(())
    for a, b in zip(fx, fy):
        d = a - b
        total = total + torch.mean(d * d)
    return total


def embedding_distance_nchw(x: torch.Tensor, y: torch.Tensor,
                            extractor: FeatureExtractor | None = None) -> torch.Tensor:
    """Squared distance between pooled final-level feature vectors (the same
    fixed-length embeddings the distributional metric fits Gaussians to),
    mean over the batch. Penalizing it keeps a perturbation from shifting an
    image's global feature statistics even when pixel error is tolerated."""
    _check_pair(x, y)
    ex = extractor or default_extractor()
    ea = ex.features(x)[-1].mean(dim=(2, 3))
    eb = ex.features(y)[-1].mean(dim=(2, 3))
    return torch.mean(torch.sum((ea - eb) ** 2, dim=1))


def embedding_shift_nchw(x: torch.Tensor, y: torch.Tensor,
                         extractor: FeatureExtractor | None = None) -> torch.Tensor:
    """Squared norm of the batch-mean pooled-embedding displacement. The
    distributional metric compares Gaussian fits of embeddings, so it reacts
    to a displacement that points the same way across a corpus far more than
    to per-image scatter; penalizing the batch mean suppresses exactly that
    common direction while leaving per-image directions free. For a batch of
    one this coincides with embedding_distance_nchw."""
    _check_pair(x, y)
    ex = extractor or default_extractor()
    ea = ex.features(x)[-1].mean(dim=(2, 3))
    eb = ex.features(y)[-1].mean(dim=(2, 3))
    return torch.sum((ea - eb).mean(dim=0) ** 2)


def gram_nchw(f: torch.Tensor) -> torch.Tensor:
    """Gram matrices for a (B, C, H, W) feature map: (B, C, C), each entry
    (1/(h*w*c)) * sum_xy F[x,y,p] F[x,y,q]."""
    b, c, h, w = f.shape
    if h * w < 1:
        raise ShapeError("empty feature map")
    flat = f.reshape(b, c, h * w)
    return torch.bmm(flat, flat.transpose(1, 2)) / (h * w * c)


def gram_distance_nchw(x: torch.Tensor, y: torch.Tensor,
                       extractor: FeatureExtractor | None = None) -> torch.Tensor:
    """Mean over levels of the Frobenius norm of Gram differences."""
    _check_pair(x, y)
    ex = extractor or default_extractor()
    fx = ex.features(x)
    fy = ex.features(y)
    total = x.new_zeros(())
    for a, b in zip(fx, fy):
        d = gram_nchw(a) - gram_nchw(b)
        total = total + torch.sqrt(torch.sum(d * d, dim=(1, 2)) + _EPS**2).mean()
    return total / len(fx)


# Single-image (H, W, C) wrappers matching the ImageTensor currency.

def extract_features(img: torch.Tensor, extractor: FeatureExtractor | None = None) -> list[torch.Tensor]:
    ex = extractor or default_extractor()
    return [f.squeeze(0).permute(1, 2, 0) for f in ex.features(to_chw(img))]


def perceptual_distance(a: torch.Tensor, b: torch.Tensor,
                        extractor: FeatureExtractor | None = None) -> torch.Tensor:
    return perceptual_distance_nchw(to_chw(a), to_chw(b), extractor)


def embedding_distance(a: torch.Tensor, b: torch.Tensor,
                       extractor: FeatureExtractor | None = None) -> torch.Tensor:
    return embedding_distance_nchw(to_chw(a), to_chw(b), extractor)


def gram(level_features: torch.Tensor) -> torch.Tensor:
    """Gram matrix of one (h, w, c) feature map."""
    if level_features.ndim != 3 or level_features.shape[0] * level_features.shape[1] < 1:
        raise ShapeError(f"expected non-empty (h,w,c) map, got {tuple(level_features.shape)}")
    f = level_features.permute(2, 0, 1).unsqueeze(0)
    return gram_nchw(f).squeeze(0)


def gram_distance(a: torch.Tensor, b: torch.Tensor,
                  extractor: FeatureExtractor | None = None) -> torch.Tensor:
    return gram_distance_nchw(to_chw(a), to_chw(b), extractor)
