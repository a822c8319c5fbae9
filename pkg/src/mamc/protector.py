"""The protector UNet G and its checkpoint format.

G maps an image to its protected twin directly (sigmoid-squashed output, so
the [0,1] range holds by construction); the perturbation is recovered as
the difference from the input. Checkpoints are self-describing ``.mamc``
containers carrying weights, the architecture spec, the training config
snapshot, the balance level, the oracle hash, and the loss history.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import torch

from mamc import container
from mamc.errors import IntegrityError, ShapeError
from mamc.imagecore import from_chw, to_chw, validate_image
from mamc.unet import SmallUNet, UNetSpec, build_unet, load_state_arrays, state_arrays

CHECKPOINT_KIND = "protector-checkpoint"


@dataclass
class LoadReport:
    path: str
    warnings: list[str] = field(default_factory=list)


def protect_nchw(x: torch.Tensor, model: SmallUNet) -> torch.Tensor:
    return model(x)


def protect(img: torch.Tensor, model: SmallUNet) -> torch.Tensor:
    validate_image(img)
    with torch.no_grad():
        return from_chw(model(to_chw(img)))


def parameter_count(spec: UNetSpec) -> int:
    return sum(p.numel() for p in build_unet(spec, seed=0).parameters())


def save_checkpoint(path, model: SmallUNet, *, level: int, oracle_hash: str,
                    epoch: int, train_config: dict | None = None,
                    loss_history: dict[str, list[float]] | None = None) -> str:
    arrays = state_arrays(model)
    meta = {
        "kind": CHECKPOINT_KIND,
        "spec": dataclasses.asdict(model.spec),
        "level": level,
        "oracle_hash": oracle_hash,
        "epoch": epoch,
        "train_config": train_config or {},
        "loss_history": loss_history or {},
        "weights_hash": container.weights_hash(arrays),
    }
    container.save_container(path, arrays, meta)
    return meta["weights_hash"]


@dataclass
class Checkpoint:
    model: SmallUNet
    spec: UNetSpec
    level: int
    oracle_hash: str
    epoch: int
    train_config: dict
    loss_history: dict[str, list[float]]
    weights_hash: str
    load_report: LoadReport


def load_checkpoint(path, expected_oracle_hash: str | None = None) -> Checkpoint:
    arrays, meta = container.load_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise IntegrityError(f"{path}: not a protector checkpoint (kind={meta.get('kind')!r})")
    for key in ("spec", "level", "oracle_hash", "epoch", "weights_hash"):
        if key not in meta:
            raise IntegrityError(f"{path}: checkpoint metadata missing field {key!r}")
    if container.weights_hash(arrays) != meta["weights_hash"]:
        raise IntegrityError(f"{path}: weights_hash mismatch")
    spec = UNetSpec(**meta["spec"])
    model = SmallUNet(spec)
    try:
        load_state_arrays(model, arrays)
    except RuntimeError as exc:
        raise IntegrityError(f"{path}: weight arrays do not match spec: {exc}") from exc
    model.eval()
    report = LoadReport(path=str(path))
    if expected_oracle_hash is not None and meta["oracle_hash"] != expected_oracle_hash:
        report.warnings.append(
            f"oracle hash mismatch: checkpoint trained against {meta['oracle_hash'][:12]}, "
            f"current oracle is {expected_oracle_hash[:12]}"
        )
    return Checkpoint(
        model=model,
        spec=spec,
        level=meta["level"],
        oracle_hash=meta["oracle_hash"],
        epoch=meta["epoch"],
        train_config=meta["train_config"],
        loss_history=meta["loss_history"],
        weights_hash=meta["weights_hash"],
        load_report=report,
    )
