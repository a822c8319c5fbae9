"""Small UNet shared by the protector and the diffusion denoiser.

Encoder/decoder blocks of two 3x3 convolutions with GELU, average-pool
downsampling, nearest-neighbor upsampling, and a skip concatenation from
every encoder block into the matching decoder block. Optional sinusoidal
time conditioning (used by the denoiser) enters each block as a per-channel
bias after the first convolution. No normalization layers, so runs are
bitwise deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from mamc.errors import ShapeError, SpecError

RESIDUAL_SCALE = 0.3  # hard ceiling on |delta| in residual mode, above any budget


@dataclass(frozen=True)
class UNetSpec:
    depth: int = 3
    base_channels: int = 16
    activation: str = "gelu"
    output_squash: str = "sigmoid"  # "sigmoid" | "none" | "residual"
    updown: str = "pool_nearest"  # "pool_nearest" or "stride_transpose"
    def __post_init__(self):
        if not 2 <= self.depth <= 5:
            raise SpecError(f"depth must be in [2,5], got {self.depth}")
        if self.base_channels < 1:
            raise SpecError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.activation != "gelu":
            raise SpecError(f"unsupported activation {self.activation!r}")
        if self.output_squash not in ("sigmoid", "none", "residual"):
            raise SpecError(f"unsupported output squash {self.output_squash!r}")
        if self.updown not in ("pool_nearest", "stride_transpose"):
            raise SpecError(f"unsupported updown {self.updown!r}")


def time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of t in [0,1]; t shape (B,), output (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=t.dtype, device=t.device) * (-math.log(1000.0) / max(half - 1, 1))
    )
    args = t[:, None] * 1000.0 * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ConvBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int | None = None):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.time_proj = nn.Linear(temb_dim, c_out) if temb_dim else None

    def forward(self, x, temb=None):
        h = self.conv1(x)
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(temb)[:, :, None, None]
        h = F.gelu(h)
        return F.gelu(self.conv2(h))


class SmallUNet(nn.Module):
    def __init__(self, spec: UNetSpec, time_conditioned: bool = False, temb_dim: int = 32):
        super().__init__()
        self.spec = spec
        self.temb_dim = temb_dim if time_conditioned else None
        if time_conditioned:
            self.time_mlp = nn.Sequential(nn.Linear(temb_dim, temb_dim), nn.GELU(),
                                          nn.Linear(temb_dim, temb_dim))
        chans = [spec.base_channels * 2**i for i in range(spec.depth)]
        self.encoders = nn.ModuleList()
        c_in = 3
        for c in chans:
            self.encoders.append(ConvBlock(c_in, c, self.temb_dim))
            c_in = c
        self.bottleneck = ConvBlock(chans[-1], chans[-1] * 2, self.temb_dim)
        self.decoders = nn.ModuleList()
        c_in = chans[-1] * 2
        if spec.updown == "stride_transpose":
            self.downs = nn.ModuleList(nn.Conv2d(c, c, 2, stride=2) for c in chans)
            ups = []
        else:
            self.downs = None
            ups = None
        self.ups = nn.ModuleList() if spec.updown == "stride_transpose" else None
        for c in reversed(chans):
            if self.ups is not None:
                self.ups.append(nn.ConvTranspose2d(c_in, c_in, 2, stride=2))
            self.decoders.append(ConvBlock(c_in + c, c, self.temb_dim))
            c_in = c
        self.head = nn.Conv2d(chans[0], 3, 1)

    def forward(self, x: torch.Tensor, t: torch.Tensor | None = None) -> torch.Tensor:
        depth = self.spec.depth
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W), got {tuple(x.shape)}")
        if x.shape[2] % 2**depth or x.shape[3] % 2**depth:
            raise SpecError(
                f"spatial dims {x.shape[2]}x{x.shape[3]} not divisible by 2^{depth}"
            )
        temb = None
        if self.temb_dim is not None:
            if t is None:
                raise ShapeError("time-conditioned UNet requires t")
            if t.ndim == 0:
                t = t.expand(x.shape[0])
            temb = self.time_mlp(time_embedding(t.to(x.dtype), self.temb_dim))
        skips = []
        h = x
        for i, enc in enumerate(self.encoders):
            h = enc(h, temb)
            skips.append(h)
            h = self.downs[i](h) if self.downs is not None else F.avg_pool2d(h, 2)
        h = self.bottleneck(h, temb)
        for i, (dec, skip) in enumerate(zip(self.decoders, reversed(skips))):
            if self.ups is not None:
                h = self.ups[i](h)
            else:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = dec(torch.cat([h, skip], dim=1), temb)
        out = self.head(h)
        if self.spec.output_squash == "sigmoid":
            out = torch.sigmoid(out)
        elif self.spec.output_squash == "residual":
            # Emit a bounded perturbation on top of the input instead of
            # regenerating it, so fidelity starts perfect and training only
            # has to shape the delta. The delta is made zero-mean per channel
            # so protection never tints the artwork with a color cast.
            delta = RESIDUAL_SCALE * torch.tanh(out)
            delta = delta - delta.mean(dim=(2, 3), keepdim=True)
            out = (x + delta).clamp(0.0, 1.0)
        return out


def build_unet(spec: UNetSpec, seed: int, time_conditioned: bool = False) -> SmallUNet:
    """Deterministically initialized UNet."""
    torch.manual_seed(seed)
    return SmallUNet(spec, time_conditioned=time_conditioned)


def state_arrays(model: nn.Module) -> dict:
    import numpy as np

    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def load_state_arrays(model: nn.Module, arrays: dict) -> None:
    sd = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    model.load_state_dict(sd)
