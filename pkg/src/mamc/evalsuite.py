"""Evaluation protocols, cross-dataset matrix, and experiment sweeps.

Protocol P1 compares inputs against their protected twins (should stay
similar). Protocol P2 compares the oracle's outputs on each (should
diverge). Every report also carries the mean perceptual distance, which is
the divergence measure used by the directional checks.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from mamc import metrics
from mamc.errors import ConfigurationError, IntegrityError
from mamc.imagecore import (
    DatasetSplit,
    from_chw,
    reference_mask,
    scale_mask,
    to_chw,
    save_image,
)
from mamc.oracle import OracleConfig, OracleWeights, diffuse, inpaint
from mamc.perceptual import perceptual_distance
from mamc.protector import Checkpoint, protect

EVAL_SEED = 7001

DEFAULT_BLUR_KERNELS = (3, 7, 11)
DEFAULT_JPEG_QUALITIES = (75, 30, 5)
DEFAULT_STRENGTHS = (4, 5, 7)
DEFAULT_ALPHA_R2 = (0.75, 1.0, 1.5)


@dataclass
class MetricReport:
    protocol: str  # "P1" or "P2"
    psnr: float
    rmse: float
    ssim: float
    fid: float
    perceptual: float
    sample_count: int
    fid_jitter: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


@dataclass
class SweepReport:
    axis: str
    points: list[dict] = field(default_factory=list)  # {"setting", "p1", "p2", ...}

    def to_json(self) -> str:
        return json.dumps({"axis": self.axis, "points": self.points}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SweepReport":
        d = json.loads(text)
        return cls(axis=d["axis"], points=d["points"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SweepReport":
        return cls.from_json(Path(path).read_text())


def _report_for_pairs(pairs: list[tuple[torch.Tensor, torch.Tensor]], protocol: str) -> MetricReport:
    psnrs, rmses, ssims, percs = [], [], [], []
    for a, b in pairs:
        psnrs.append(metrics.psnr(a, b))
        rmses.append(metrics.rmse(a, b))
        ssims.append(metrics.ssim(a, b))
        with torch.no_grad():
            percs.append(float(perceptual_distance(a, b)))
    fid_value, info = metrics.fid([a for a, _ in pairs], [b for _, b in pairs], return_info=True)
    return MetricReport(
        protocol=protocol,
        psnr=float(np.mean(psnrs)),
        rmse=float(np.mean(rmses)),
        ssim=float(np.mean(ssims)),
        fid=fid_value,
        perceptual=float(np.mean(percs)),
        sample_count=len(pairs),
        fid_jitter=info["jitter_applied"],
    )


def _oracle_out(img: torch.Tensor, oracle: OracleWeights, cfg: OracleConfig):
    with torch.no_grad():
        if cfg.mode == "inpaint":
            mask = scale_mask(reference_mask(), img)
            return inpaint(img, mask, oracle, cfg)
        return diffuse(img, oracle, cfg)


def eval_protocols(images: dict[str, torch.Tensor], split: DatasetSplit,
                   checkpoint: Checkpoint, oracle: OracleWeights,
                   oracle_config: OracleConfig | None = None,
                   force: bool = False, max_images: int | None = None,
                   postprocess=None) -> tuple[MetricReport, MetricReport]:
    """P1: I vs I' over the test split. P2: M(I) vs M(I') at the
    checkpoint's oracle config (overridable). Per-image oracle seeds are
    fixed, so evaluation is deterministic."""
    if checkpoint.oracle_hash != oracle.weights_hash and not force:
        raise IntegrityError(
            "checkpoint oracle hash does not match the supplied oracle; pass force=True to override"
        )
    if oracle_config is None:
        snap = checkpoint.train_config.get("oracle", {})
        oracle_config = OracleConfig(strength=snap.get("strength", 5),
                                     steps=snap.get("steps", 5),
                                     mode=snap.get("mode", "reconstruct"))
    ids = split.test[:max_images] if max_images else split.test
    if not ids:
        raise ConfigurationError("empty test split")
    p1_pairs, p2_pairs = [], []
    for idx, name in enumerate(ids):
        img = images[name]
        protected = protect(img, checkpoint.model)
        if postprocess is not None:
            img_in, prot_in = postprocess(img), postprocess(protected)
        else:
            img_in, prot_in = img, protected
        cfg = replace(oracle_config, seed=EVAL_SEED + idx)
        p1_pairs.append((img_in, prot_in))
        p2_pairs.append((_oracle_out(img_in, oracle, cfg), _oracle_out(prot_in, oracle, cfg)))
    return _report_for_pairs(p1_pairs, "P1"), _report_for_pairs(p2_pairs, "P2")


def cross_dataset(bank: list[tuple[str, Checkpoint]],
                  datasets: list[tuple[str, dict[str, torch.Tensor], DatasetSplit]],
                  oracle: OracleWeights, max_images: int | None = None) -> dict:
    """|bank| x |datasets| grid of protocol pairs; cell failures are
    recorded without aborting the grid."""
    grid = {"rows": [], "oracle_hash": oracle.weights_hash}
    for model_name, ckpt in bank:
        row = {"model": model_name, "cells": []}
        for ds_name, images, split in datasets:
            cell = {"dataset": ds_name}
            try:
                p1, p2 = eval_protocols(images, split, ckpt, oracle, max_images=max_images)
                cell["p1"] = p1.to_dict()
                cell["p2"] = p2.to_dict()
            except Exception as exc:  # noqa: BLE001 - per-cell isolation
                cell["error"] = str(exc)
            row["cells"].append(cell)
        grid["rows"].append(row)
    return grid


def gaussian_blur(img: torch.Tensor, kernel: int) -> torch.Tensor:
    """Gaussian blur with sigma = kernel/6, reflect padding."""
    if kernel % 2 == 0:
        raise ConfigurationError(f"blur kernel must be odd, got {kernel}")
    import torch.nn.functional as F

    sigma = kernel / 6.0
    coords = torch.arange(kernel, dtype=torch.float64) - (kernel - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = (g / g.sum())
    k2d = torch.outer(g, g).to(torch.float32).expand(3, 1, kernel, kernel).contiguous()
    x = to_chw(img)
    x = F.pad(x, [kernel // 2] * 4, mode="reflect")
    return from_chw(F.conv2d(x, k2d, groups=3)).clamp(0.0, 1.0)


def jpeg_compress(img: torch.Tensor, quality: int) -> torch.Tensor:
    """Encode/decode through baseline JPEG at the given quality."""
    if not 1 <= quality <= 100:
        raise ConfigurationError(f"jpeg quality must be in [1,100], got {quality}")
    from PIL import Image

    arr = np.clip(np.rint(img.numpy() * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    out = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(out)


def robustness_sweep(images, split, checkpoint, oracle,
                     blur_kernels=DEFAULT_BLUR_KERNELS,
                     jpeg_qualities=DEFAULT_JPEG_QUALITIES,
                     max_images: int | None = None) -> SweepReport:
    """Post-process both I and I' (blur / JPEG) before diffusion and
    recompute both protocols per setting. Includes an unprocessed
    baseline point."""
    for k in blur_kernels:
        if k % 2 == 0:
            raise ConfigurationError(f"blur kernel must be odd, got {k}")
    report = SweepReport(axis="postprocess")
    settings = [("none", None)]
    settings += [(f"blur{k}", lambda im, k=k: gaussian_blur(im, k)) for k in blur_kernels]
    settings += [(f"jpeg{q}", lambda im, q=q: jpeg_compress(im, q)) for q in jpeg_qualities]
    for name, post in settings:
        p1, p2 = eval_protocols(images, split, checkpoint, oracle,
                                max_images=max_images, postprocess=post)
        report.points.append({"setting": name, "p1": p1.to_dict(), "p2": p2.to_dict()})
    return report


def strength_sweep(images, split, checkpoint, oracle,
                   strengths=DEFAULT_STRENGTHS, max_images: int | None = None) -> SweepReport:
    """P2 metrics per oracle strength, preceded by the P1 reference row."""
    report = SweepReport(axis="strength")
    p1_ref, _ = eval_protocols(images, split, checkpoint, oracle, max_images=max_images)
    report.points.append({"setting": "reference-P1", "p1": p1_ref.to_dict(), "p2": None})
    for s in strengths:
        cfg = OracleConfig(strength=s)
        p1, p2 = eval_protocols(images, split, checkpoint, oracle,
                                oracle_config=cfg, max_images=max_images)
        report.points.append({"setting": f"str{s}", "p1": p1.to_dict(), "p2": p2.to_dict()})
    return report


def ablation_suite(images, split, base_config, oracle, out_dir,
                   variants=("full", "no_noise", "no_noise_no_r2", "no_style"),
                   max_images: int | None = None, log=None) -> SweepReport:
    """Train each loss variant, evaluate both protocols; per-variant
    failures are isolated."""
    from mamc.training import train

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = SweepReport(axis="loss_variant")
    for variant in variants:
        point = {"setting": variant}
        try:
            cfg = replace(base_config, loss_variant=variant)
            ckpt, _ = train(images, split, cfg, oracle,
                            out_dir / f"protector_{variant}.mamc", log=log)
            p1, p2 = eval_protocols(images, split, ckpt, oracle, max_images=max_images)
            point["p1"] = p1.to_dict()
            point["p2"] = p2.to_dict()
        except Exception as exc:  # noqa: BLE001
            point["error"] = str(exc)
        report.points.append(point)
    return report


def weight_sweep(images, split, base_config, oracle, out_dir,
                 alpha_r2_values=DEFAULT_ALPHA_R2,
                 max_images: int | None = None, log=None) -> SweepReport:
    """Train at each pixel-regularizer weight, report both protocols."""
    from mamc.objective import profile_for_level
    from mamc.training import train

    for v in alpha_r2_values:
        if v <= 0:
            raise ConfigurationError(f"alpha_r2 must be positive, got {v}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = SweepReport(axis="alpha_r2")
    base_weights = profile_for_level(base_config.level).weights
    for v in alpha_r2_values:
        point = {"setting": f"alpha_r2={v}"}
        try:
            cfg = replace(base_config, weights_override=replace(base_weights, alpha_r2=v))
            ckpt, _ = train(images, split, cfg, oracle,
                            out_dir / f"protector_ar2_{v}.mamc", log=log)
            p1, p2 = eval_protocols(images, split, ckpt, oracle, max_images=max_images)
            point["p1"] = p1.to_dict()
            point["p2"] = p2.to_dict()
        except Exception as exc:  # noqa: BLE001
            point["error"] = str(exc)
        report.points.append(point)
    return report


def export_gallery(images, split, checkpoint, oracle, oracle_config, out_path,
                   count: int = 4) -> Path:
    """Image grid: one row per sample with [I, I', M(I), M(I')]."""
    ids = split.test[:count]
    rows = []
    for idx, name in enumerate(ids):
        img = images[name]
        protected = protect(img, checkpoint.model)
        cfg = replace(oracle_config, seed=EVAL_SEED + idx)
        m_in = _oracle_out(img, oracle, cfg)
        m_prot = _oracle_out(protected, oracle, cfg)
        rows.append(torch.cat([img, protected, m_in, m_prot], dim=1))
    grid = torch.cat(rows, dim=0).clamp(0.0, 1.0)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_image(grid, out_path)
    return out_path


def inpaint_scenarios(images, split, reconstruction_ckpt: Checkpoint | None,
                      inpaint_ckpt: Checkpoint | None, oracle, out_dir,
                      max_images: int | None = None) -> SweepReport:
    """The three inpainting scenarios: (1) reconstruction-trained model on
    the inpainting task, (2) inpaint-trained model on inpainting,
    (3) inpaint-trained model back on reconstruction. Missing checkpoints
    mark their scenarios unavailable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenarios = [
        ("recon_model_inpaint_task", reconstruction_ckpt, OracleConfig(strength=5, mode="inpaint")),
        ("inpaint_model_inpaint_task", inpaint_ckpt, OracleConfig(strength=5, mode="inpaint")),
        ("inpaint_model_recon_task", inpaint_ckpt, OracleConfig(strength=5, mode="reconstruct")),
    ]
    report = SweepReport(axis="inpaint_scenario")
    for name, ckpt, cfg in scenarios:
        point = {"setting": name}
        if ckpt is None:
            point["status"] = "unavailable"
        else:
            try:
                p1, p2 = eval_protocols(images, split, ckpt, oracle,
                                        oracle_config=cfg, force=True,
                                        max_images=max_images)
                gallery = export_gallery(images, split, ckpt, oracle, cfg,
                                         out_dir / f"gallery_{name}.png")
                point.update({"status": "ok", "p1": p1.to_dict(), "p2": p2.to_dict(),
                              "gallery": gallery.name})
            except Exception as exc:  # noqa: BLE001
                point.update({"status": "error", "error": str(exc)})
        report.points.append(point)
    return report


def plot_sweep(report: SweepReport, out_path,
               psnr_norm: float = 30.0, rmse_norm: float = 10.0) -> Path:
    """Grouped bar plot; PSNR normalized by 30, RMSE by 10, FID on a log
    scale (plotted as log10)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels, series = [], {"psnr/30": [], "rmse/10": [], "ssim": [], "log10 fid": []}
    for point in report.points:
        p2 = point.get("p2")
        if not p2:
            continue
        labels.append(point["setting"])
        series["psnr/30"].append(p2["psnr"] / psnr_norm)
        series["rmse/10"].append(p2["rmse"] / rmse_norm)
        series["ssim"].append(p2["ssim"])
        series["log10 fid"].append(np.log10(max(p2["fid"], 1e-12)))
    fig, ax = plt.subplots(figsize=(8, 4), dpi=100)
    x = np.arange(len(labels))
    width = 0.2
    for i, (name, vals) in enumerate(series.items()):
        ax.bar(x + (i - 1.5) * width, vals, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, fontsize=8)
    ax.set_title(f"sweep: {report.axis} (P2 metrics)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
