"""Protector training against the frozen oracle, loss-curve logging, and
balance-bank production.

The logged loss series are signed *contributions* to the total (the attack
terms enter negatively), so the total series always recomposes exactly as
the sum of the four term series, and a masked-out term contributes exactly
zero.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from mamc import objective, oracle as oracle_mod, protector
from mamc.errors import ConfigurationError
from mamc.imagecore import DatasetSplit, MaskSpec, scale_mask, reference_mask, to_chw
from mamc.objective import (
    BUDGET_PENALTY_WEIGHT,
    MEAN_EMBED_SCALE,
    BalanceProfile,
    LossWeights,
    delta_violation_nchw,
    loss_content_nchw,
    loss_noise_nchw,
    loss_reconstruction_nchw,
    loss_style_nchw,
    profile_for_level,
    toned_noise_nchw,
)
from mamc.perceptual import embedding_shift_nchw
from mamc.oracle import OracleConfig, OracleWeights, diffuse_nchw, inpaint
from mamc.unet import UNetSpec, build_unet

LOSS_VARIANTS = ("full", "no_noise", "no_noise_no_r2", "no_style")
PENALTY_WARMUP_STEPS = 50
TERM_NAMES = ("reconstruction", "content", "style", "noise", "total", "budget_penalty")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 5
    batch_size: int = 8
    seed: int = 0
    level: int = 50
    oracle_config: OracleConfig = field(default_factory=lambda: OracleConfig(strength=5))
    loss_variant: str = "full"
    unet_spec: UNetSpec = field(default_factory=lambda: UNetSpec(output_squash="residual"))
    weights_override: LossWeights | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigurationError(
                f"loss variant must be one of {LOSS_VARIANTS}, got {self.loss_variant!r}"
            )


@dataclass
class TrainReport:
    epoch_means: list[dict[str, float]]
    wall_time: float
    checkpoint_path: str
    oracle_hash: str


def masked_weights(weights: LossWeights, variant: str) -> LossWeights:
    if variant == "full":
        return weights
    if variant == "no_noise":
        return replace(weights, alpha_n=0.0)
    if variant == "no_noise_no_r2":
        return replace(weights, alpha_n=0.0, alpha_r2=0.0)
    if variant == "no_style":
        return replace(weights, alpha_s=0.0)
    raise ConfigurationError(f"unknown loss variant {variant!r}")


def derive_seed(seed: int, *parts) -> int:
    key = ":".join(str(p) for p in (seed, *parts))
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=4).digest(), "big")


def _check_finite(name: str, value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value).all():
        raise RuntimeError(f"training aborted: non-finite {name} term at step {step}")


def _oracle_batch(x_prime: torch.Tensor, oracle: OracleWeights, cfg: OracleConfig,
                  mask: MaskSpec | None) -> torch.Tensor:
    if cfg.mode == "inpaint":
        from mamc.imagecore import from_chw

        outs = [to_chw(inpaint(from_chw(x_prime[i : i + 1]), mask, oracle, cfg))
                for i in range(x_prime.shape[0])]
        return torch.cat(outs, dim=0)
    return diffuse_nchw(x_prime, oracle, cfg)


def train(images: dict[str, torch.Tensor], split: DatasetSplit, config: TrainConfig,
          oracle: OracleWeights, out_path, log=None) -> tuple[protector.Checkpoint, TrainReport]:
    """Gradient descent on the combined loss through protect -> diffuse.
    Deterministic given (split, config, oracle); never touches oracle weights."""
    if not split.train:
        raise ConfigurationError("empty training split")
    profile = profile_for_level(config.level)
    weights = masked_weights(config.weights_override or profile.weights, config.loss_variant)
    oracle_hash_before = oracle.weights_hash

    torch.manual_seed(config.seed)
    model = build_unet(config.unet_spec, seed=config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    data = torch.stack([to_chw(images[i]).squeeze(0) for i in split.train])
    mask = None
    if config.oracle_config.mode == "inpaint":
        mask = scale_mask(reference_mask(), images[split.train[0]])

    t0 = time.time()
    epoch_means: list[dict[str, float]] = []
    step = 0
    n = data.shape[0]
    for epoch in range(config.epochs):
        gen = torch.Generator().manual_seed(derive_seed(config.seed, "order", epoch))
        perm = torch.randperm(n, generator=gen)
        sums = {k: 0.0 for k in TERM_NAMES}
        batches = 0
        for i in range(0, n, config.batch_size):
            x = data[perm[i : i + config.batch_size]]
            x_prime = model(x)
            step_cfg = oracle_mod.config_with_seed(
                config.oracle_config, derive_seed(config.seed, "oracle", step)
            )
            m_out = _oracle_batch(x_prime, oracle, step_cfg, mask)

            # Warm up the preservation terms: the oracle only yields useful
            # attack gradients once the perturbation has some amplitude, so
            # clamping it too hard from step 0 can trap training at the
            # identity protector. Ramping reconstruction and the budget
            # penalties over the first steps lets the attack establish
            # itself; the final equilibrium is still set by the full weights.
            ramp = min(1.0, (step + 1) / PENALTY_WARMUP_STEPS)
            rec = ramp * loss_reconstruction_nchw(x, x_prime, weights)
            if weights.alpha_c > 0:
                # Clean-output anchor for the content divergence: constant
                # (no gradient), so the reward can only push M(x') away from
                # M(x), never drag x' itself.
                with torch.no_grad():
                    m_ref = _oracle_batch(x, oracle, step_cfg, mask)
                con = -weights.alpha_c * loss_content_nchw(m_ref, x_prime, m_out)
            else:
                con = x.new_zeros(())
            sty = (-weights.alpha_s * loss_style_nchw(x_prime, m_out)
                   if weights.alpha_s > 0 else x.new_zeros(()))
            noise_seed = derive_seed(config.seed, "noise", step)
            noi = (weights.alpha_n * loss_noise_nchw(
                       m_out, noise_seed, noise=toned_noise_nchw(x, noise_seed))
                   if weights.alpha_n > 0 else x.new_zeros(()))
            total = rec + con + sty + noi
            penalty = ramp * (
                BUDGET_PENALTY_WEIGHT * delta_violation_nchw(x, x_prime, profile)
                + MEAN_EMBED_SCALE * embedding_shift_nchw(x, x_prime)
            )
            for name, value in (("reconstruction", rec), ("content", con), ("style", sty),
                                ("noise", noi), ("total", total), ("budget_penalty", penalty)):
                _check_finite(name, value, step)
                sums[name] += float(value.detach())
            opt.zero_grad()
            (total + penalty).backward()
            opt.step()
            step += 1
            batches += 1
        means = {k: v / batches for k, v in sums.items()}
        epoch_means.append(means)
        if log:
            log(f"epoch {epoch + 1}/{config.epochs}: " +
                " ".join(f"{k}={v:.4f}" for k, v in means.items()))

    if oracle.weights_hash != oracle_hash_before:
        raise RuntimeError("integrity panic: oracle weights mutated during training")

    history = {k: [m[k] for m in epoch_means] for k in TERM_NAMES}
    cfg_snapshot = {
        "learning_rate": config.learning_rate, "epochs": config.epochs,
        "batch_size": config.batch_size, "seed": config.seed, "level": config.level,
        "loss_variant": config.loss_variant,
        "oracle": {"strength": config.oracle_config.strength, "steps": config.oracle_config.steps,
                   "mode": config.oracle_config.mode, "seed": config.oracle_config.seed},
        "weights": weights.__dict__,
        "delta_budget": profile.delta_budget,
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    protector.save_checkpoint(out_path, model, level=config.level,
                              oracle_hash=oracle.weights_hash, epoch=config.epochs,
                              train_config=cfg_snapshot, loss_history=history)
    ckpt = protector.load_checkpoint(out_path, expected_oracle_hash=oracle.weights_hash)
    report = TrainReport(epoch_means=epoch_means, wall_time=time.time() - t0,
                         checkpoint_path=str(out_path), oracle_hash=oracle.weights_hash)
    return ckpt, report


def train_balance_bank(images: dict[str, torch.Tensor], split: DatasetSplit,
                       base_config: TrainConfig, oracle: OracleWeights, out_dir,
                       levels=objective.BALANCE_LEVELS, snapshot_images: int = 16,
                       log=None) -> dict:
    """One checkpoint per balance level; manifest maps level -> path + a
    small metrics snapshot. A failed level is marked unavailable, the rest
    proceed."""
    for level in levels:
        profile_for_level(level)  # fail fast on a missing preset
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for level in levels:
        cfg = replace(base_config, level=level)
        path = out_dir / f"protector_level{level}.mamc"
        try:
            ckpt, report = train(images, split, cfg, oracle, path, log=log)
            from mamc.evalsuite import eval_protocols

            p1, p2 = eval_protocols(images, split, ckpt, oracle,
                                    max_images=snapshot_images)
            entries.append({
                "level": level, "status": "available", "available": True,
                "path": path.name,
                "weights_hash": ckpt.weights_hash,
                "metrics": {"p1": p1.to_dict(), "p2": p2.to_dict()},
            })
        except Exception as exc:  # noqa: BLE001 - isolate per-level failures
            entries.append({"level": level, "status": "unavailable",
                            "available": False, "error": str(exc)})
            if log:
                log(f"level {level} failed: {exc}")
    manifest = {"oracle_hash": oracle.weights_hash, "levels": entries}
    (out_dir / "bank_manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def emit_loss_curves(report: TrainReport, path_prefix) -> tuple[Path, Path]:
    """Per-term series as CSV plus an 800x400 PNG plot."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    terms = ("reconstruction", "content", "style", "noise", "total")
    csv_path = prefix.with_suffix(".csv")
    with open(csv_path, "w") as f:
        f.write("epoch," + ",".join(terms) + "\n")
        for e, means in enumerate(report.epoch_means, start=1):
            f.write(f"{e}," + ",".join(f"{means[t]:.8f}" for t in terms) + "\n")
    fig, ax = plt.subplots(figsize=(8, 4), dpi=100)
    xs = range(1, len(report.epoch_means) + 1)
    for t in terms:
        ax.plot(xs, [m[t] for m in report.epoch_means], marker="o", label=t)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss contribution")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = prefix.with_suffix(".png")
    fig.savefig(png_path)
    plt.close(fig)
    return csv_path, png_path
