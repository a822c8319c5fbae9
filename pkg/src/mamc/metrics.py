"""Image-quality metrics: PSNR, RMSE, SSIM, FID.

PSNR and RMSE are computed on the 0-255 intensity scale. SSIM is the
standard windowed form (11x11 Gaussian window, sigma 1.5, default stability
constants). FID embeds images through the fixed perceptual extractor's
final level, global-average-pooled; absolute values are therefore not
comparable to scores from a pretrained Inception embedder.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg

from mamc.errors import ConfigurationError, ShapeError, SizeError
from mamc.perceptual import FeatureExtractor, default_extractor
from mamc.imagecore import to_chw

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
FID_JITTER = 1e-6


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def rmse(a: torch.Tensor, b: torch.Tensor) -> float:
    """Root mean squared difference on the 0-255 scale."""
    _check_pair(a, b)
    diff = (a.double() - b.double()) * 255.0
    return float(torch.sqrt(torch.mean(diff * diff)))


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """20*log10(255 / RMSE), capped at 100 dB for zero error."""
    r = rmse(a, b)
    if r == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(20.0 * np.log10(255.0 / r)))


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = SSIM_WINDOW,
         sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over valid windows and channels, on the [0,1] scale."""
    _check_pair(a, b)
    if a.shape[0] < window or a.shape[1] < window:
        raise SizeError(f"image {a.shape[0]}x{a.shape[1]} smaller than SSIM window {window}")
    x = to_chw(a).double()
    y = to_chw(b).double()
    c = x.shape[1]
    w = _gaussian_window(window, sigma, torch.float64).expand(c, 1, window, window).contiguous()
    mu_x = F.conv2d(x, w, groups=c)
    mu_y = F.conv2d(y, w, groups=c)
    mu_x2, mu_y2, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sig_x2 = F.conv2d(x * x, w, groups=c) - mu_x2
    sig_y2 = F.conv2d(y * y, w, groups=c) - mu_y2
    sig_xy = F.conv2d(x * y, w, groups=c) - mu_xy
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_xy + c1) * (2 * sig_xy + c2)
    den = (mu_x2 + mu_y2 + c1) * (sig_x2 + sig_y2 + c2)
    return float(torch.mean(num / den))


def embed_images(images: list[torch.Tensor],
                 extractor: FeatureExtractor | None = None) -> np.ndarray:
    """Fixed-length embeddings: final extractor level, global-average-pooled."""
    ex = extractor or default_extractor()
    vecs = []
    with torch.no_grad():
        for img in images:
            f = ex.features(to_chw(img))[-1]
            vecs.append(f.mean(dim=(2, 3)).squeeze(0).double().numpy())
    return np.stack(vecs)


def fid(set_a: list[torch.Tensor], set_b: list[torch.Tensor],
        extractor: FeatureExtractor | None = None,
        return_info: bool = False):
    """Frechet distance between Gaussians fitted to embedded image sets."""
    if len(set_a) < 2 or len(set_b) < 2:
        raise ConfigurationError("fid requires at least 2 images per set")
    ea = embed_images(set_a, extractor)
    eb = embed_images(set_b, extractor)
    mu_a, mu_b = ea.mean(axis=0), eb.mean(axis=0)
    cov_a = np.cov(ea, rowvar=False)
    cov_b = np.cov(eb, rowvar=False)
    jittered = False
    dim = cov_a.shape[0]
    # Covariances from small sets are singular; jitter keeps sqrtm stable.
    if min(len(set_a), len(set_b)) <= dim or min(
        np.linalg.eigvalsh(cov_a).min(), np.linalg.eigvalsh(cov_b).min()
    ) < FID_JITTER:
        cov_a = cov_a + FID_JITTER * np.eye(dim)
        cov_b = cov_b + FID_JITTER * np.eye(dim)
        jittered = True
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * covmean))
    value = max(value, 0.0)
    if return_info:
        return value, {"jitter_applied": jittered, "embedder": "mamc-fixed-extractor"}
    return value
