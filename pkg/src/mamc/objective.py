"""Loss terms, their combination, the perturbation budget, and the
balance-level presets.

Sign convention: every term function returns a non-negative magnitude.
The combiner applies each attack sign exactly once:

    total = reconstruction - a_c * content - a_s * style + a_n * noise

so reconstruction and noise-proximity are minimized while the content and
style similarity magnitudes between the protected image and its diffusion
output are maximized. Weights are likewise applied exactly once (a_r1/a_r2
inside the reconstruction term; a_c/a_s/a_n in the combiner).
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass
from functools import lru_cache

import torch

from mamc.errors import ConfigurationError, ShapeError
from mamc.imagecore import to_chw
from mamc.perceptual import (
    FeatureExtractor,
    embedding_distance_nchw,
    feature_distance_nchw,
    gram_distance_nchw,
    perceptual_distance_nchw,
)

BUDGET_EPSILON = 0.005
BUDGET_PENALTY_WEIGHT = 10.0

NOISE_MEAN = 0.5
NOISE_STD = 0.25
NOISE_TONE_GAIN = 3.0

# Unit calibration between heterogeneous loss terms. Pixel MSE on [0,1] is
# numerically tiny next to feature-space distances, and the raw-feature
# noise distance is numerically large; these constants bring all four terms
# to comparable magnitudes so the preset weights express real trade-offs.
MSE_SCALE = 10.0
NOISE_SCALE = 3.0
EMBED_SCALE = 4.0
CONTENT_EMBED_SCALE = 2.0
# Weight on the batch-mean embedding displacement of the perturbation
# (training-loop term, applied alongside the budget hinge): the
# distributional quality metric is dominated by a displacement that points
# the same way across the corpus, so that common direction is penalized much
# harder than per-image scatter.
MEAN_EMBED_SCALE = 50.0

BALANCE_LEVELS = (10, 30, 50, 70, 90)


@dataclass(frozen=True)
class LossWeights:
    alpha_r1: float
    alpha_r2: float
    alpha_c: float
    alpha_s: float
    alpha_n: float

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (v >= 0.0 and v == v and v != float("inf")):
                raise ConfigurationError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class BalanceProfile:
    level: int
    weights: LossWeights
    delta_budget: float  # max mean-absolute perturbation, normalized intensity


@dataclass
class LossBreakdown:
    reconstruction: torch.Tensor
    content: torch.Tensor
    style: torch.Tensor
    noise: torch.Tensor
    total: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in
                ("reconstruction", "content", "style", "noise", "total")}


@lru_cache(maxsize=1)
def _preset_table() -> dict[int, BalanceProfile]:
    raw = json.loads(
        importlib.resources.files("mamc").joinpath("assets/balance_presets.json").read_text()
    )
    table = {}
    for entry in raw["levels"]:
        w = LossWeights(**entry["weights"])
        table[int(entry["level"])] = BalanceProfile(
            level=int(entry["level"]), weights=w, delta_budget=float(entry["delta_budget"])
        )
    return table


def profile_for_level(level: int) -> BalanceProfile:
    table = _preset_table()
    if level not in table:
        raise ConfigurationError(
            f"unknown balance level {level}; valid levels: {sorted(table)}"
        )
    return table[level]


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def sample_noise_nchw(shape: tuple, seed: int, dtype=torch.float32) -> torch.Tensor:
    """Gaussian noise target: mean 0.5, std 0.25, clipped to [0,1].
    Resampled per call from the given seed."""
    gen = torch.Generator().manual_seed(seed)
    n = torch.empty(shape, dtype=dtype).normal_(NOISE_MEAN, NOISE_STD, generator=gen)
    return n.clamp(0.0, 1.0)


def toned_noise_nchw(x: torch.Tensor, seed: int) -> torch.Tensor:
    """Noise target whose global tone is the input's own tone deviation,
    amplified. A single gray target would pull every attacked output toward
    the same point and let the oracle's contraction wash the attack out of
    distribution-level statistics; amplifying each image's tone instead
    scatters the attacked outputs away from the clean output distribution
    while each target is still plain clipped Gaussian noise."""
    noise = sample_noise_nchw(tuple(x.shape), seed, dtype=x.dtype)
    tone = x.detach().mean(dim=(1, 2, 3), keepdim=True) - NOISE_MEAN
    return (noise + NOISE_TONE_GAIN * tone).clamp(0.0, 1.0)


# Batched (B, 3, H, W) forms used by the training loop.

def loss_reconstruction_nchw(x, x_prime, w: LossWeights,
                             extractor: FeatureExtractor | None = None) -> torch.Tensor:
    _check_pair(x, x_prime)
    mse = MSE_SCALE * torch.mean((x - x_prime) ** 2)
    # Perceptual distance is unit-normalized and therefore blind to shifts in
    # global feature energy; the pooled-embedding term closes that gap so the
    # perturbation cannot drift the image's texture statistics unpenalized.
    feat = perceptual_distance_nchw(x, x_prime, extractor) + EMBED_SCALE * (
        embedding_distance_nchw(x, x_prime, extractor)
    )
    return w.alpha_r1 * feat + w.alpha_r2 * mse


def loss_content_nchw(ref, x_prime, m_out, extractor=None) -> torch.Tensor:
    _check_pair(x_prime, m_out)
    _check_pair(ref, m_out)
    # Perceptual distance is unit-normalized, so on its own the content
    # divergence cannot reward pushing the oracle output's global feature
    # statistics away from a reference; the pooled-embedding term makes that
    # direction count. The reference is treated as a fixed anchor (training
    # passes the oracle's clean output), so maximizing the term can only move
    # the attacked oracle output, never the protected image itself — the
    # reconstruction term polices that side.
    return perceptual_distance_nchw(x_prime, m_out, extractor) + (
        CONTENT_EMBED_SCALE * embedding_distance_nchw(ref, m_out, extractor)
    )


def loss_style_nchw(x_prime, m_out, extractor=None) -> torch.Tensor:
    _check_pair(x_prime, m_out)
    return gram_distance_nchw(x_prime, m_out, extractor)


def loss_noise_nchw(m_out, seed: int, extractor=None,
                    noise: torch.Tensor | None = None) -> torch.Tensor:
    """Raw-feature distance between the oracle output and a noise target.
    Non-normalized features on purpose: attracting the output toward noise
    must be able to raise its texture energy, which unit-normalized
    distances cannot see."""
    if noise is None:
        noise = sample_noise_nchw(tuple(m_out.shape), seed, dtype=m_out.dtype)
    _check_pair(m_out, noise)
    return NOISE_SCALE * feature_distance_nchw(m_out, noise, extractor)


def loss_total_nchw(x, x_prime, m_out, w: LossWeights, seed: int,
                    extractor=None, noise: torch.Tensor | None = None,
                    ref: torch.Tensor | None = None) -> LossBreakdown:
    rec = loss_reconstruction_nchw(x, x_prime, w, extractor)
    con = loss_content_nchw(x if ref is None else ref, x_prime, m_out, extractor)
    sty = loss_style_nchw(x_prime, m_out, extractor)
    if noise is None:
        noise = toned_noise_nchw(x, seed)
    noi = loss_noise_nchw(m_out, seed, extractor, noise=noise)
    total = rec - w.alpha_c * con - w.alpha_s * sty + w.alpha_n * noi
    return LossBreakdown(reconstruction=rec, content=con, style=sty, noise=noi, total=total)


def delta_violation_nchw(x, x_prime, profile: BalanceProfile) -> torch.Tensor:
    """Soft hinge on the mean-absolute perturbation budget."""
    _check_pair(x, x_prime)
    mean_abs = torch.mean(torch.abs(x_prime - x))
    return torch.clamp(mean_abs - (profile.delta_budget + BUDGET_EPSILON), min=0.0)


# Single-image (H, W, C) spec surface.

def loss_reconstruction(img, img_prime, w: LossWeights, extractor=None) -> torch.Tensor:
    return loss_reconstruction_nchw(to_chw(img), to_chw(img_prime), w, extractor)


def loss_content(img, img_prime, m_out, extractor=None) -> torch.Tensor:
    return loss_content_nchw(to_chw(img), to_chw(img_prime), to_chw(m_out), extractor)


def loss_style(img_prime, m_out, extractor=None) -> torch.Tensor:
    return loss_style_nchw(to_chw(img_prime), to_chw(m_out), extractor)


def loss_noise(m_out, seed: int, extractor=None, noise=None) -> torch.Tensor:
    return loss_noise_nchw(to_chw(m_out), seed, extractor,
                           noise=None if noise is None else to_chw(noise))


def loss_total(img, img_prime, m_out, w: LossWeights, seed: int,
               extractor=None, noise=None) -> LossBreakdown:
    return loss_total_nchw(to_chw(img), to_chw(img_prime), to_chw(m_out), w, seed,
                           extractor, noise=None if noise is None else to_chw(noise))


def delta_violation(img, img_prime, profile: BalanceProfile) -> torch.Tensor:
    return delta_violation_nchw(to_chw(img), to_chw(img_prime), profile)
