"""Frozen desk-scale diffusion oracle: img2img generation and inpainting.

A small time-conditioned UNet denoiser under a variance-preserving noising
schedule (100 discretization points), sampled with a deterministic few-step
DDIM-style sampler so the whole chain is cheap to backpropagate through.
The strength knob (0-10) maps linearly to the fraction of the schedule
applied before denoising: 0 returns the input untouched, 10 generates from
pure noise ignoring the input.

Weights are frozen after pretraining; nothing in the training module ever
mutates them. An HTTP client for a remote hosted oracle is provided for
evaluation only (never in the training path, not differentiable).
"""

from __future__ import annotations

import base64
import os
import time
import dataclasses
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import torch

from mamc import container
from mamc.errors import (
    ConfigurationError,
    IntegrityError,
    MaskError,
    ProtocolError,
    ShapeError,
    TransportError,
)
from mamc.imagecore import MaskSpec, from_chw, mask_to_tensor, to_chw, validate_image
from mamc.unet import SmallUNet, UNetSpec, build_unet, load_state_arrays, state_arrays

SCHEDULE_POINTS = 100
DEFAULT_STEPS = 5
DEFAULT_SCHEDULE = "vp-linear-100"

# Fixed lattice codec wrapping the diffusion chain (see encode_signal).
ENCODER_SEED = 20240911
DEFAULT_ENCODER_GAIN = 0.2
DEFAULT_ENCODER_FREQ = 18.0

ENV_ORACLE_URL = "MAMC_ORACLE_URL"
ENV_ORACLE_KEY = "MAMC_ORACLE_KEY"


@dataclass(frozen=True)
class OracleConfig:
    strength: int = 5
    steps: int = DEFAULT_STEPS
    mode: str = "reconstruct"  # "reconstruct" | "inpaint"
    seed: int = 0
    noise_schedule: str = DEFAULT_SCHEDULE

    def __post_init__(self):
        if not 0 <= self.strength <= 10:
            raise ConfigurationError(f"strength must be in [0,10], got {self.strength}")
        if not 1 <= self.steps <= 50:
            raise ConfigurationError(f"steps must be in [1,50], got {self.steps}")
        if self.mode not in ("reconstruct", "inpaint"):
            raise ConfigurationError(f"mode must be reconstruct or inpaint, got {self.mode!r}")
        if self.noise_schedule != DEFAULT_SCHEDULE:
            raise ConfigurationError(f"unknown noise schedule {self.noise_schedule!r}")


@lru_cache(maxsize=4)
def _alpha_bars(dtype: torch.dtype) -> torch.Tensor:
    """alpha_bar indexed by t in 0..T; alpha_bar[0] = 1."""
    betas = torch.linspace(5e-4, 0.1, SCHEDULE_POINTS, dtype=torch.float64)
    ab = torch.cumprod(1.0 - betas, dim=0)
    return torch.cat([torch.ones(1, dtype=torch.float64), ab]).to(dtype)


def _to_signal(x: torch.Tensor) -> torch.Tensor:
    """Image domain [0,1] -> diffusion signal domain [-1,1]."""
    return x * 2.0 - 1.0


def _from_signal(x: torch.Tensor) -> torch.Tensor:
    return (x + 1.0) / 2.0


@lru_cache(maxsize=4)
def _encoder_filters(dtype: torch.dtype):
    g = torch.Generator().manual_seed(ENCODER_SEED)
    w1 = torch.randn(12, 3, 1, 1, generator=g)
    b1 = torch.rand(12, generator=g) * 2.0 * np.pi
    w2 = torch.randn(3, 12, 3, 3, generator=g) / np.sqrt(12 * 9)
    return w1.to(dtype), b1.to(dtype), w2.to(dtype)


def _lattice(z: torch.Tensor, gain: float, freq: float) -> torch.Tensor:
    w1, b1, w2 = _encoder_filters(z.dtype)
    phase = torch.nn.functional.conv2d(z, w1) * freq + b1[None, :, None, None]
    return gain * torch.nn.functional.conv2d(torch.sin(phase), w2, padding=1)


def encode_signal(z: torch.Tensor, gain: float, freq: float) -> torch.Tensor:
    """Fixed lattice codec: z + gain * sinusoidal projection of z.

    The diffusion chain operates on encoded signals and its output is passed
    back through decode_signal. The codec is near-invertible for natural
    images, yet its Jacobian ripples at high frequency in pixel-value space,
    so some input directions are locally expanded. Large latent generative
    stacks owe their susceptibility to protective perturbations to exactly
    this property of their learned autoencoders; the seeded lattice recreates
    it at desk scale without any learned component.
    """
    return z + _lattice(z, gain, freq)


def decode_signal(y: torch.Tensor, gain: float, freq: float) -> torch.Tensor:
    """First-order inverse of encode_signal: subtracts the lattice of the
    *output*, which matches the encoder's additive term only where the signal
    moves the lattice phase slowly. At low frequency this recovers the input
    almost exactly; at the operating frequency the mismatch is the codec's
    deliberate fragility. Consistency, not exact inversion, is the contract:
    the denoiser is trained on encoded signals, so both sides of every
    output-vs-output comparison share the same decode."""
    return y - _lattice(y, gain, freq)


class OracleWeights:
    """Immutable frozen denoiser weights plus provenance."""

    def __init__(self, arrays: dict[str, np.ndarray], spec: UNetSpec,
                 resolution: int, corpus_fingerprint: str,
                 encoder_gain: float = DEFAULT_ENCODER_GAIN,
                 encoder_freq: float = DEFAULT_ENCODER_FREQ):
        self._arrays = {k: v.copy() for k, v in arrays.items()}
        self.spec = spec
        self.resolution = resolution
        self.corpus_fingerprint = corpus_fingerprint
        self.encoder_gain = float(encoder_gain)
        self.encoder_freq = float(encoder_freq)
        self.weights_hash = container.weights_hash(self._arrays)
        self._module_cache: dict[torch.dtype, SmallUNet] = {}

    def denoiser(self, dtype: torch.dtype = torch.float32) -> SmallUNet:
        if dtype not in self._module_cache:
            model = SmallUNet(self.spec, time_conditioned=True)
            load_state_arrays(model, self._arrays)
            model = model.to(dtype)
            model.eval()
            for p in model.parameters():
                p.requires_grad_(False)
            self._module_cache[dtype] = model
        return self._module_cache[dtype]

    @classmethod
    def from_model(cls, model: SmallUNet, resolution: int, corpus_fingerprint: str,
                   encoder_gain: float = DEFAULT_ENCODER_GAIN,
                   encoder_freq: float = DEFAULT_ENCODER_FREQ) -> "OracleWeights":
        return cls(state_arrays(model), model.spec, resolution, corpus_fingerprint,
                   encoder_gain=encoder_gain, encoder_freq=encoder_freq)

    def save(self, path) -> None:
        meta = {
            "kind": "oracle-weights",
            "resolution": self.resolution,
            "corpus_fingerprint": self.corpus_fingerprint,
            "weights_hash": self.weights_hash,
            "spec": dataclasses.asdict(self.spec),
            "encoder_gain": self.encoder_gain,
            "encoder_freq": self.encoder_freq,
        }
        container.save_container(path, self._arrays, meta)

    @classmethod
    def load(cls, path) -> "OracleWeights":
        arrays, meta = container.load_container(path)
        if meta.get("kind") != "oracle-weights":
            raise IntegrityError(f"{path}: not an oracle-weights container")
        w = cls(arrays, UNetSpec(**meta["spec"]), meta["resolution"], meta["corpus_fingerprint"],
                encoder_gain=meta.get("encoder_gain", DEFAULT_ENCODER_GAIN),
                encoder_freq=meta.get("encoder_freq", DEFAULT_ENCODER_FREQ))
        if w.weights_hash != meta.get("weights_hash"):
            raise IntegrityError(f"{path}: weights_hash mismatch")
        return w


def corpus_fingerprint(images: list[torch.Tensor]) -> str:
    import hashlib

    h = hashlib.sha256()
    for img in images:
        h.update(np.ascontiguousarray(img.detach().cpu().numpy(), dtype=np.float32).tobytes())
    return h.hexdigest()


def pretrain_oracle(images: list[torch.Tensor], epochs: int, seed: int,
                    resolution: int | None = None, batch_size: int = 16,
                    lr: float = 1e-3, spec: UNetSpec | None = None,
                    min_corpus: int = 500,
                    encoder_gain: float = DEFAULT_ENCODER_GAIN,
                    encoder_freq: float = DEFAULT_ENCODER_FREQ, log=None) -> OracleWeights:
    """Train the small denoiser on a corpus (standard eps-prediction MSE)
    and freeze it."""
    if epochs < 1:
        raise ConfigurationError(f"epochs must be >= 1, got {epochs}")
    if len(images) < min_corpus:
        raise ConfigurationError(f"oracle corpus too small: {len(images)} < {min_corpus}")
    resolution = resolution or images[0].shape[0]
    for img in images:
        if img.shape[0] != resolution or img.shape[1] != resolution:
            raise ShapeError("oracle corpus images must share the resolution")
    spec = spec or UNetSpec(depth=2, base_channels=16, output_squash="none")
    torch.manual_seed(seed)
    model = SmallUNet(spec, time_conditioned=True)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    data = torch.stack([to_chw(img).squeeze(0) for img in images])
    ab = _alpha_bars(torch.float32)
    gen = torch.Generator().manual_seed(seed)
    n = len(images)
    for epoch in range(epochs):
        perm = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        batches = 0
        for i in range(0, n, batch_size):
            x0 = encode_signal(_to_signal(data[perm[i : i + batch_size]]),
                               encoder_gain, encoder_freq)
            t = torch.randint(1, SCHEDULE_POINTS + 1, (x0.shape[0],), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            a = ab[t].view(-1, 1, 1, 1)
            xt = torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps
            pred = model(xt, t.float() / SCHEDULE_POINTS)
            loss = torch.mean((pred - eps) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            batches += 1
        if log:
            log(f"oracle epoch {epoch + 1}/{epochs}: eps-mse {epoch_loss / batches:.4f}")
    return OracleWeights.from_model(model, resolution, corpus_fingerprint(images),
                                    encoder_gain=encoder_gain, encoder_freq=encoder_freq)


def _ddim_timesteps(t_start: int, steps: int) -> list[int]:
    ts = np.unique(np.round(np.linspace(t_start, 0, steps + 1)).astype(int))[::-1]
    return [int(t) for t in ts]


def diffuse_nchw(x: torch.Tensor, weights: OracleWeights, config: OracleConfig) -> torch.Tensor:
    """Differentiable img2img on a (B,3,H,W) batch. Pure function of
    (x, weights, config); output clamped to [0,1]."""
    if config.mode != "reconstruct":
        raise ConfigurationError("diffuse requires mode=reconstruct")
    if x.shape[2] != weights.resolution or x.shape[3] != weights.resolution:
        raise ShapeError(
            f"input {x.shape[2]}x{x.shape[3]} does not match oracle resolution {weights.resolution}"
        )
    if config.strength == 0:
        return x
    ab = _alpha_bars(x.dtype)
    t_start = round(SCHEDULE_POINTS * config.strength / 10)
    gen = torch.Generator().manual_seed(config.seed)
    eps0 = torch.randn(x.shape, generator=gen, dtype=x.dtype)
    if config.strength == 10:
        xt = eps0  # pure generation: input ignored entirely
    else:
        z = encode_signal(_to_signal(x), weights.encoder_gain, weights.encoder_freq)
        xt = torch.sqrt(ab[t_start]) * z + torch.sqrt(1.0 - ab[t_start]) * eps0
    model = weights.denoiser(x.dtype)
    ts = _ddim_timesteps(t_start, config.steps)
    for t_cur, t_next in zip(ts[:-1], ts[1:]):
        t_in = torch.full((x.shape[0],), t_cur / SCHEDULE_POINTS, dtype=x.dtype)
        eps = model(xt, t_in)
        x0 = (xt - torch.sqrt(1.0 - ab[t_cur]) * eps) / torch.sqrt(ab[t_cur])
        if t_next == 0:
            xt = x0
        else:
            xt = torch.sqrt(ab[t_next]) * x0 + torch.sqrt(1.0 - ab[t_next]) * eps
    out = decode_signal(xt, weights.encoder_gain, weights.encoder_freq)
    return _from_signal(out).clamp(0.0, 1.0)


def diffuse(img: torch.Tensor, weights: OracleWeights, config: OracleConfig) -> torch.Tensor:
    validate_image(img)
    return from_chw(diffuse_nchw(to_chw(img), weights, config))


def inpaint(img: torch.Tensor, mask: MaskSpec, weights: OracleWeights,
            config: OracleConfig) -> torch.Tensor:
    """Synthesize the masked region from the full schedule, re-imposing the
    appropriately-noised known region at every step; unmasked pixels are
    copied from the input exactly."""
    if config.mode != "inpaint":
        raise ConfigurationError("inpaint requires mode=inpaint")
    validate_image(img)
    if mask.height == 0 or mask.width == 0:
        return img
    mask.validate_for(img.shape[0], img.shape[1])
    if img.shape[0] != weights.resolution or img.shape[1] != weights.resolution:
        raise ShapeError(
            f"input {img.shape[0]}x{img.shape[1]} does not match oracle resolution {weights.resolution}"
        )
    x0_img = to_chw(img)
    x0_true = encode_signal(_to_signal(x0_img), weights.encoder_gain, weights.encoder_freq)
    m = mask_to_tensor(mask, img.shape[0], img.shape[1]).to(x0_true.dtype)[None, None]
    ab = _alpha_bars(x0_true.dtype)
    gen = torch.Generator().manual_seed(config.seed)
    xt = torch.randn(x0_true.shape, generator=gen, dtype=x0_true.dtype)
    model = weights.denoiser(x0_true.dtype)
    ts = _ddim_timesteps(SCHEDULE_POINTS, config.steps)
    for t_cur, t_next in zip(ts[:-1], ts[1:]):
        t_in = torch.full((1,), t_cur / SCHEDULE_POINTS, dtype=x0_true.dtype)
        eps = model(xt, t_in)
        x0 = (xt - torch.sqrt(1.0 - ab[t_cur]) * eps) / torch.sqrt(ab[t_cur])
        if t_next == 0:
            xt = x0
        else:
            xt = torch.sqrt(ab[t_next]) * x0 + torch.sqrt(1.0 - ab[t_next]) * eps
            noise = torch.randn(x0_true.shape, generator=gen, dtype=x0_true.dtype)
            known = torch.sqrt(ab[t_next]) * x0_true + torch.sqrt(1.0 - ab[t_next]) * noise
            xt = m * xt + (1.0 - m) * known
    dec = decode_signal(xt, weights.encoder_gain, weights.encoder_freq)
    out = m * _from_signal(dec).clamp(0.0, 1.0) + (1.0 - m) * x0_img
    return from_chw(out)


def apply_oracle(img: torch.Tensor, weights: OracleWeights, config: OracleConfig,
                 mask: MaskSpec | None = None) -> torch.Tensor:
    """Mode dispatch used by training and evaluation."""
    if config.mode == "inpaint":
        if mask is None:
            raise MaskError("inpaint mode requires a mask")
        return inpaint(img, mask, weights, config)
    return diffuse(img, weights, config)


def remote_diffuse(img: torch.Tensor, endpoint: str | None, config: OracleConfig,
                   resolution: int = 64, max_retries: int = 3,
                   timeout: float = 30.0) -> torch.Tensor:
    """Evaluation-only client for a hosted img2img service. Sends base64
    PNG + config as JSON; expects PNG bytes back. Never differentiable."""
    import httpx

    from mamc.imagecore import decode_image_bytes, encode_png

    endpoint = endpoint or os.environ.get(ENV_ORACLE_URL)
    if not endpoint:
        raise ConfigurationError(f"no remote oracle endpoint ({ENV_ORACLE_URL} unset)")
    headers = {}
    key = os.environ.get(ENV_ORACLE_KEY)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    payload = {
        "image": base64.b64encode(encode_png(img)).decode(),
        "strength": config.strength,
        "steps": config.steps,
        "mode": config.mode,
        "seed": config.seed,
    }
    last_exc: Exception | None = None
    for attempt in range(max_retries):
        try:
            resp = httpx.post(endpoint, json=payload, headers=headers, timeout=timeout)
            resp.raise_for_status()
            break
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            last_exc = exc
            if attempt < max_retries - 1:
                time.sleep(0.2 * 2**attempt)
    else:
        raise TransportError(
            f"remote oracle unreachable after {max_retries} attempts: {last_exc}"
        )
    try:
        return decode_image_bytes(resp.content, target_size=resolution)
    except Exception as exc:
        raise ProtocolError(f"remote oracle returned a non-image response: {exc}") from exc


def config_with_seed(config: OracleConfig, seed: int) -> OracleConfig:
    return replace(config, seed=seed)
