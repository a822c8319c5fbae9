from __future__ import annotations

import pytest
import torch

from mamc.errors import ShapeError, SpecError
from mamc.unet import (
    RESIDUAL_SCALE,
    SmallUNet,
    UNetSpec,
    build_unet,
    load_state_arrays,
    state_arrays,
    time_embedding,
)
from mamc.container import weights_hash


def _x(seed: int = 0, b: int = 2, hw: int = 16) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(b, 3, hw, hw, generator=gen)


class TestSpec:
    def test_defaults(self):
        spec = UNetSpec()
        assert (spec.depth, spec.base_channels) == (3, 16)

    @pytest.mark.parametrize("kwargs", [
        {"depth": 1}, {"depth": 6}, {"base_channels": 0},
        {"activation": "relu"}, {"output_squash": "tanh"}, {"updown": "bilinear"},
    ])
    def test_rejects_bad_spec(self, kwargs):
        with pytest.raises(SpecError):
            UNetSpec(**kwargs)


class TestTimeEmbedding:
    def test_shape_and_range(self):
        e = time_embedding(torch.tensor([0.0, 0.5, 1.0]), 32)
        assert e.shape == (3, 32)
        assert float(e.abs().max()) <= 1.0

    def test_distinguishes_times(self):
        e = time_embedding(torch.tensor([0.1, 0.9]), 32)
        assert not torch.allclose(e[0], e[1])


class TestForward:
    def test_sigmoid_output_in_unit_range(self):
        model = build_unet(UNetSpec(output_squash="sigmoid"), seed=0)
        y = model(_x())
        assert y.shape == (2, 3, 16, 16)
        assert float(y.min()) >= 0.0 and float(y.max()) <= 1.0

    def test_residual_bounded_delta(self):
        model = build_unet(UNetSpec(output_squash="residual"), seed=0)
        x = _x(1)
        y = model(x)
        assert float((y - x).abs().max()) <= RESIDUAL_SCALE + 1e-6
        assert float(y.min()) >= 0.0 and float(y.max()) <= 1.0

    def test_residual_delta_zero_mean_per_channel(self):
        model = build_unet(UNetSpec(output_squash="residual"), seed=0)
        # Mid-gray input keeps the clamp inactive, so the per-channel
        # zero-mean property of the raw delta is observable exactly.
        x = torch.full((1, 3, 16, 16), 0.5)
        delta = model(x) - x
        assert float(delta.mean(dim=(2, 3)).abs().max()) < 1e-6

    def test_none_squash_unbounded(self):
        model = build_unet(UNetSpec(depth=2, output_squash="none"), seed=0)
        y = model(_x(2))
        assert y.shape == (2, 3, 16, 16)

    def test_rejects_bad_layout(self):
        model = build_unet(UNetSpec(), seed=0)
        with pytest.raises(ShapeError):
            model(torch.zeros(16, 16, 3))

    def test_rejects_indivisible_dims(self):
        model = build_unet(UNetSpec(depth=3), seed=0)
        with pytest.raises(SpecError):
            model(torch.zeros(1, 3, 20, 20))

    def test_time_conditioned_requires_t(self):
        model = build_unet(UNetSpec(depth=2, output_squash="none"), seed=0,
                           time_conditioned=True)
        with pytest.raises(ShapeError):
            model(_x(3))
        y = model(_x(3), torch.tensor([0.5, 0.5]))
        assert y.shape == (2, 3, 16, 16)

    def test_time_input_changes_output(self):
        model = build_unet(UNetSpec(depth=2, output_squash="none"), seed=0,
                           time_conditioned=True)
        x = _x(4)
        y1 = model(x, torch.tensor([0.1, 0.1]))
        y2 = model(x, torch.tensor([0.9, 0.9]))
        assert not torch.allclose(y1, y2)

    def test_stride_transpose_variant(self):
        model = build_unet(UNetSpec(depth=2, updown="stride_transpose"), seed=0)
        assert model(_x(5)).shape == (2, 3, 16, 16)


class TestDeterminism:
    def test_same_seed_same_weights(self):
        a = build_unet(UNetSpec(), seed=7)
        b = build_unet(UNetSpec(), seed=7)
        assert weights_hash(state_arrays(a)) == weights_hash(state_arrays(b))

    def test_different_seed_different_weights(self):
        a = build_unet(UNetSpec(), seed=7)
        b = build_unet(UNetSpec(), seed=8)
        assert weights_hash(state_arrays(a)) != weights_hash(state_arrays(b))

    def test_state_round_trip(self):
        a = build_unet(UNetSpec(), seed=9)
        b = build_unet(UNetSpec(), seed=10)
        load_state_arrays(b, state_arrays(a))
        x = _x(6)
        assert torch.equal(a(x), b(x))
