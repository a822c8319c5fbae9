"""Image representation, I/O, dataset ingestion and splitting.

Images are torch tensors of shape (H, W, 3), float32, values in [0, 1].
The canonical desk-scale resolution is 64x64; every pipeline takes the
resolution as a parameter with 64 as the tested default.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from mamc.errors import (
    ConfigurationError,
    FormatError,
    IngestionError,
    MaskError,
    ShapeError,
)

CANONICAL_RESOLUTION = 64
MIN_DIM = 8

SUPPORTED_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class DatasetSplit:
    train: list[str]
    test: list[str]
    seed: int


@dataclass(frozen=True)
class MaskSpec:
    """Rectangle in pixel coordinates: rows [top, top+height), cols [left, left+width)."""

    top: int
    left: int
    height: int
    width: int

    def validate_for(self, img_h: int, img_w: int) -> None:
        if self.height <= 0 or self.width <= 0:
            raise MaskError(f"degenerate mask {self.height}x{self.width}")
        if self.top < 0 or self.left < 0 or self.top + self.height > img_h or self.left + self.width > img_w:
            raise MaskError(
                f"mask {self} outside image bounds {img_h}x{img_w}"
            )


# Appendix-B inpainting mask, stated at the 512x512 reference resolution:
# 120x66 (h x w), centered horizontally in the middle of the upper half.
REFERENCE_RESOLUTION = 512
REFERENCE_MASK_H = 120
REFERENCE_MASK_W = 66


def validate_image(img: torch.Tensor) -> torch.Tensor:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 tensor, got shape {tuple(img.shape)}")
    if img.shape[0] < MIN_DIM or img.shape[1] < MIN_DIM:
        raise ShapeError(f"image must be at least {MIN_DIM}x{MIN_DIM}, got {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise ShapeError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ShapeError("image values outside [0, 1]")
    return img


def to_chw(img: torch.Tensor) -> torch.Tensor:
    """(H,W,C) -> (1,C,H,W) for conv layers."""
    return img.permute(2, 0, 1).unsqueeze(0)


def from_chw(x: torch.Tensor) -> torch.Tensor:
    """(1,C,H,W) or (C,H,W) -> (H,W,C)."""
    if x.ndim == 4:
        x = x.squeeze(0)
    return x.permute(1, 2, 0)


def load_image(path, target_size: int = CANONICAL_RESOLUTION) -> torch.Tensor:
    """Read a PNG/JPEG, resize to target_size x target_size (bilinear),
    normalize 8-bit intensities into [0, 1], promote grayscale to RGB."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise FormatError(f"unsupported format {path.suffix!r} for {path}")
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (target_size, target_size):
                im = im.resize((target_size, target_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    return torch.from_numpy(arr)


def save_image(img: torch.Tensor, path) -> None:
    """Write an ImageTensor as an 8-bit PNG (lossless)."""
    validate_image(img)
    arr = np.clip(np.rint(img.detach().cpu().numpy() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(Path(path), format="PNG")


def original_size(data: bytes) -> tuple[int, int]:
    """(width, height) of an encoded image without fully decoding it."""
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            return im.size
    except (UnidentifiedImageError, OSError) as exc:
        raise IngestionError(f"cannot read image bytes: {exc}") from exc


def encode_png(img: torch.Tensor) -> bytes:
    import io

    validate_image(img)
    arr = np.clip(np.rint(img.detach().cpu().numpy() * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_image_bytes(data: bytes, target_size: int = CANONICAL_RESOLUTION) -> torch.Tensor:
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            im = im.convert("RGB")
            if im.size != (target_size, target_size):
                im = im.resize((target_size, target_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise IngestionError(f"cannot decode image bytes: {exc}") from exc
    return torch.from_numpy(arr)


def list_corpus(directory, manifest=None) -> list[str]:
    """Identifiers of a corpus directory: manifest lines if given, else
    sorted image filenames."""
    directory = Path(directory)
    if manifest is not None:
        lines = Path(manifest).read_text().splitlines()
        ids = [ln.strip() for ln in lines if ln.strip()]
    else:
        ids = sorted(
            p.name for p in directory.iterdir() if p.suffix.lower() in SUPPORTED_SUFFIXES
        )
    if not ids:
        raise ConfigurationError(f"no images found in {directory}")
    return ids


def split_dataset(corpus: list[str], seed: int) -> DatasetSplit:
    """Deterministic shuffle by seed, then 70/30 partition."""
    if len(corpus) < 10:
        raise ConfigurationError(f"corpus too small: {len(corpus)} < 10")
    order = list(corpus)
    random.Random(seed).shuffle(order)
    n_train = round(0.7 * len(order))
    return DatasetSplit(train=order[:n_train], test=order[n_train:], seed=seed)


def reference_mask() -> MaskSpec:
    """The 120x66 inpainting mask at the 512x512 reference resolution,
    centered horizontally in the middle of the upper half."""
    top = round(REFERENCE_RESOLUTION / 4 - REFERENCE_MASK_H / 2)
    left = round((REFERENCE_RESOLUTION - REFERENCE_MASK_W) / 2)
    return MaskSpec(top=top, left=left, height=REFERENCE_MASK_H, width=REFERENCE_MASK_W)


def scale_mask(reference: MaskSpec, image: torch.Tensor,
               reference_resolution: int = REFERENCE_RESOLUTION) -> MaskSpec:
    """Scale a reference-resolution mask to an image, keeping it centered
    horizontally in the middle of the upper half."""
    validate_image(image)
    img_h, img_w = image.shape[0], image.shape[1]
    h = round(reference.height * img_h / reference_resolution)
    w = round(reference.width * img_w / reference_resolution)
    if h <= 0 or w <= 0:
        raise MaskError(
            f"scaled mask degenerate: {h}x{w} from {reference.height}x{reference.width} at {img_h}x{img_w}"
        )
    h = min(h, img_h)
    w = min(w, img_w)
    # Center of the upper half sits at row img_h/4.
    top = max(0, round(img_h / 4 - h / 2))
    if top + h > img_h:
        top = img_h - h
    left = max(0, round((img_w - w) / 2))
    mask = MaskSpec(top=top, left=left, height=h, width=w)
    mask.validate_for(img_h, img_w)
    return mask


def mask_to_tensor(mask: MaskSpec, img_h: int, img_w: int) -> torch.Tensor:
    """Binary (H,W) tensor, 1 inside the mask."""
    m = torch.zeros(img_h, img_w)
    m[mask.top : mask.top + mask.height, mask.left : mask.left + mask.width] = 1.0
    return m
