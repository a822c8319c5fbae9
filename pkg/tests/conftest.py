from __future__ import annotations

import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from mamc.corpus import toy_corpus
from mamc.imagecore import split_dataset
from mamc.oracle import OracleWeights, pretrain_oracle

TESTS_DIR = Path(__file__).parent
ASSETS_DIR = TESTS_DIR / "assets"

# Small resolution used by unit tests so a full train/eval cycle stays fast.
TINY_RES = 16
TINY_COUNT = 24


def seeded_image(seed: int, h: int = 16, w: int = 16) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(h, w, 3, generator=gen)


@pytest.fixture(scope="session")
def tiny_images() -> dict[str, torch.Tensor]:
    return toy_corpus(TINY_COUNT, seed=3, resolution=TINY_RES)


@pytest.fixture(scope="session")
def tiny_split(tiny_images):
    return split_dataset(sorted(tiny_images), seed=3)


@pytest.fixture(scope="session")
def tiny_oracle(tiny_images) -> OracleWeights:
    return pretrain_oracle(list(tiny_images.values()), epochs=2, seed=11,
                           min_corpus=1)


@pytest.fixture(scope="session")
def toy_oracle() -> OracleWeights:
    """The frozen full-resolution oracle shipped as a test asset (regenerate
    with tests/make_assets.py)."""
    path = ASSETS_DIR / "toy_oracle.mamc"
    if not path.exists():
        pytest.skip("toy oracle asset missing; run tests/make_assets.py")
    return OracleWeights.load(path)
