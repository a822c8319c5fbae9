from __future__ import annotations

import dataclasses

import pytest
import torch

from mamc.container import IntegrityError, save_container
from mamc.errors import ConfigurationError, MaskError, ShapeError
from mamc.imagecore import MaskSpec, scale_mask, reference_mask, to_chw
from mamc.oracle import (
    DEFAULT_ENCODER_FREQ,
    DEFAULT_ENCODER_GAIN,
    SCHEDULE_POINTS,
    OracleConfig,
    OracleWeights,
    _alpha_bars,
    _ddim_timesteps,
    apply_oracle,
    config_with_seed,
    corpus_fingerprint,
    decode_signal,
    diffuse,
    diffuse_nchw,
    encode_signal,
    inpaint,
    pretrain_oracle,
)

from conftest import TINY_RES, seeded_image


def _tiny_img(seed: int) -> torch.Tensor:
    return seeded_image(seed, TINY_RES, TINY_RES)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"strength": -1}, {"strength": 11}, {"steps": 0}, {"steps": 51},
        {"mode": "txt2img"}, {"noise_schedule": "cosine"},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            OracleConfig(**kwargs)

    def test_config_with_seed(self):
        cfg = OracleConfig(strength=5, seed=1)
        cfg2 = config_with_seed(cfg, 42)
        assert cfg2.seed == 42 and cfg2.strength == 5
        assert cfg.seed == 1  # original untouched


class TestSchedule:
    def test_alpha_bars_shape_and_monotonic(self):
        ab = _alpha_bars(torch.float64)
        assert ab.shape == (SCHEDULE_POINTS + 1,)
        assert float(ab[0]) == 1.0
        assert all(float(ab[i]) > float(ab[i + 1]) for i in range(SCHEDULE_POINTS))
        assert float(ab[-1]) > 0.0

    def test_ddim_timesteps(self):
        ts = _ddim_timesteps(100, 5)
        assert ts[0] == 100 and ts[-1] == 0
        assert all(a > b for a, b in zip(ts, ts[1:]))
        assert len(ts) == 6

    def test_ddim_timesteps_short_start(self):
        ts = _ddim_timesteps(3, 10)  # fewer distinct integers than steps
        assert ts[0] == 3 and ts[-1] == 0
        assert len(set(ts)) == len(ts)


class TestCodec:
    def test_encode_deterministic(self):
        z = to_chw(_tiny_img(0)) * 2 - 1
        a = encode_signal(z, DEFAULT_ENCODER_GAIN, DEFAULT_ENCODER_FREQ)
        b = encode_signal(z, DEFAULT_ENCODER_GAIN, DEFAULT_ENCODER_FREQ)
        assert torch.equal(a, b)

    def test_zero_gain_is_identity(self):
        z = to_chw(_tiny_img(1)) * 2 - 1
        assert torch.equal(encode_signal(z, 0.0, DEFAULT_ENCODER_FREQ), z)
        assert torch.equal(decode_signal(z, 0.0, DEFAULT_ENCODER_FREQ), z)

    def test_residual_bounded_by_gain(self):
        z = to_chw(_tiny_img(2)) * 2 - 1
        for gain in (0.1, 0.2, 0.4):
            r = encode_signal(z, gain, DEFAULT_ENCODER_FREQ) - z
            # The sinusoidal projection is bounded, so the residual scales
            # with the gain up to a fixed constant.
            assert float(r.abs().max()) < gain * 5.0

    def test_decode_inverts_at_low_frequency(self):
        # decode is a first-order inverse: where the lattice phase moves
        # slowly with the signal (low frequency) the round trip recovers the
        # input far better than leaving it encoded.
        z = to_chw(_tiny_img(3)) * 2 - 1
        y = encode_signal(z, DEFAULT_ENCODER_GAIN, 1.0)
        back = decode_signal(y, DEFAULT_ENCODER_GAIN, 1.0)
        assert float((back - z).abs().mean()) < 0.5 * float((y - z).abs().mean())

    def test_round_trip_bounded_at_operating_frequency(self):
        # At the operating frequency exact inversion is deliberately absent;
        # the round-trip error stays bounded by the codec amplitude scale.
        z = to_chw(_tiny_img(3)) * 2 - 1
        y = encode_signal(z, DEFAULT_ENCODER_GAIN, DEFAULT_ENCODER_FREQ)
        back = decode_signal(y, DEFAULT_ENCODER_GAIN, DEFAULT_ENCODER_FREQ)
        assert float((back - z).abs().max()) < DEFAULT_ENCODER_GAIN * 5.0

    def test_differentiable(self):
        z = (to_chw(_tiny_img(4)) * 2 - 1).requires_grad_(True)
        encode_signal(z, DEFAULT_ENCODER_GAIN, DEFAULT_ENCODER_FREQ).sum().backward()
        assert z.grad is not None and torch.isfinite(z.grad).all()


class TestPretrain:
    def test_rejects_tiny_corpus_by_default(self):
        with pytest.raises(ConfigurationError, match="corpus too small"):
            pretrain_oracle([_tiny_img(i) for i in range(5)], epochs=1, seed=0)

    def test_rejects_mixed_resolutions(self):
        imgs = [_tiny_img(0), seeded_image(1, TINY_RES * 2, TINY_RES * 2)]
        with pytest.raises(ShapeError):
            pretrain_oracle(imgs, epochs=1, seed=0, min_corpus=1)

    def test_deterministic(self, tiny_images):
        imgs = list(tiny_images.values())[:12]
        a = pretrain_oracle(imgs, epochs=1, seed=5, min_corpus=1)
        b = pretrain_oracle(imgs, epochs=1, seed=5, min_corpus=1)
        assert a.weights_hash == b.weights_hash

    def test_records_provenance(self, tiny_oracle, tiny_images):
        assert tiny_oracle.resolution == TINY_RES
        assert tiny_oracle.corpus_fingerprint == corpus_fingerprint(list(tiny_images.values()))
        assert tiny_oracle.encoder_gain == DEFAULT_ENCODER_GAIN
        assert tiny_oracle.encoder_freq == DEFAULT_ENCODER_FREQ


class TestWeightsContainer:
    def test_save_load_round_trip(self, tiny_oracle, tmp_path):
        p = tmp_path / "oracle.mamc"
        tiny_oracle.save(p)
        loaded = OracleWeights.load(p)
        assert loaded.weights_hash == tiny_oracle.weights_hash
        assert loaded.spec == tiny_oracle.spec
        assert loaded.resolution == tiny_oracle.resolution
        assert loaded.encoder_gain == tiny_oracle.encoder_gain
        assert loaded.encoder_freq == tiny_oracle.encoder_freq
        x = to_chw(_tiny_img(5))
        cfg = OracleConfig(strength=5, seed=3)
        assert torch.equal(diffuse_nchw(x, loaded, cfg), diffuse_nchw(x, tiny_oracle, cfg))

    def test_rejects_wrong_kind(self, tmp_path):
        p = tmp_path / "bad.mamc"
        save_container(p, {}, {"kind": "protector-checkpoint"})
        with pytest.raises(IntegrityError, match="oracle-weights"):
            OracleWeights.load(p)

    def test_frozen_denoiser(self, tiny_oracle):
        model = tiny_oracle.denoiser()
        assert all(not p.requires_grad for p in model.parameters())

    def test_arrays_copied_on_construction(self, tiny_oracle):
        # Mutating the source arrays after construction must not change the
        # oracle (weights are frozen by copy, not by reference).
        import numpy as np

        arrays = {k: v.copy() for k, v in tiny_oracle._arrays.items()}
        w = OracleWeights(arrays, tiny_oracle.spec, tiny_oracle.resolution, "fp")
        before = w.weights_hash
        next(iter(arrays.values()))[...] = 0.0
        from mamc.container import weights_hash

        assert weights_hash(w._arrays) == before


class TestDiffuse:
    def test_strength_zero_exact_identity(self, tiny_oracle):
        img = _tiny_img(6)
        out = diffuse(img, tiny_oracle, OracleConfig(strength=0, seed=1))
        assert torch.equal(out, img)

    def test_strength_ten_ignores_input(self, tiny_oracle):
        cfg = OracleConfig(strength=10, seed=2)
        a = diffuse(_tiny_img(7), tiny_oracle, cfg)
        b = diffuse(_tiny_img(8), tiny_oracle, cfg)
        assert torch.equal(a, b)

    def test_deterministic_in_seed(self, tiny_oracle):
        img = _tiny_img(9)
        cfg = OracleConfig(strength=5, seed=3)
        assert torch.equal(diffuse(img, tiny_oracle, cfg), diffuse(img, tiny_oracle, cfg))

    def test_seed_changes_output(self, tiny_oracle):
        img = _tiny_img(10)
        a = diffuse(img, tiny_oracle, OracleConfig(strength=5, seed=1))
        b = diffuse(img, tiny_oracle, OracleConfig(strength=5, seed=2))
        assert not torch.equal(a, b)

    def test_output_valid_range(self, tiny_oracle):
        out = diffuse(_tiny_img(11), tiny_oracle, OracleConfig(strength=7, seed=4))
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
        assert out.shape == (TINY_RES, TINY_RES, 3)

    def test_resolution_mismatch(self, tiny_oracle):
        with pytest.raises(ShapeError):
            diffuse(seeded_image(0, TINY_RES * 2, TINY_RES * 2), tiny_oracle,
                    OracleConfig(strength=5))

    def test_rejects_inpaint_mode(self, tiny_oracle):
        with pytest.raises(ConfigurationError):
            diffuse_nchw(to_chw(_tiny_img(12)), tiny_oracle,
                         OracleConfig(strength=5, mode="inpaint"))

    def test_differentiable_graph(self, tiny_oracle):
        x = to_chw(_tiny_img(13)).requires_grad_(True)
        out = diffuse_nchw(x, tiny_oracle, OracleConfig(strength=5, steps=2, seed=5))
        out.sum().backward()
        assert x.grad is not None and torch.isfinite(x.grad).all()
        assert float(x.grad.abs().sum()) > 0.0


class TestInpaint:
    def _mask(self):
        return scale_mask(reference_mask(), _tiny_img(0))

    def test_unmasked_pixels_exact(self, tiny_oracle):
        img = _tiny_img(14)
        mask = self._mask()
        cfg = OracleConfig(strength=5, mode="inpaint", seed=6)
        out = inpaint(img, mask, tiny_oracle, cfg)
        keep = torch.ones(TINY_RES, TINY_RES, dtype=torch.bool)
        keep[mask.top : mask.top + mask.height, mask.left : mask.left + mask.width] = False
        assert torch.equal(out[keep], img[keep])

    def test_masked_region_changes(self, tiny_oracle):
        img = _tiny_img(15)
        mask = self._mask()
        out = inpaint(img, mask, tiny_oracle, OracleConfig(strength=5, mode="inpaint", seed=7))
        region = (slice(mask.top, mask.top + mask.height),
                  slice(mask.left, mask.left + mask.width))
        assert not torch.equal(out[region], img[region])

    def test_deterministic(self, tiny_oracle):
        img = _tiny_img(16)
        mask = self._mask()
        cfg = OracleConfig(strength=5, mode="inpaint", seed=8)
        assert torch.equal(inpaint(img, mask, tiny_oracle, cfg),
                           inpaint(img, mask, tiny_oracle, cfg))

    def test_rejects_reconstruct_mode(self, tiny_oracle):
        with pytest.raises(ConfigurationError):
            inpaint(_tiny_img(17), self._mask(), tiny_oracle, OracleConfig(strength=5))

    def test_rejects_out_of_bounds_mask(self, tiny_oracle):
        bad = MaskSpec(top=TINY_RES - 2, left=0, height=8, width=8)
        with pytest.raises(MaskError):
            inpaint(_tiny_img(18), bad, tiny_oracle,
                    OracleConfig(strength=5, mode="inpaint"))


class TestApplyOracle:
    def test_dispatches_reconstruct(self, tiny_oracle):
        img = _tiny_img(19)
        cfg = OracleConfig(strength=5, seed=9)
        assert torch.equal(apply_oracle(img, tiny_oracle, cfg), diffuse(img, tiny_oracle, cfg))

    def test_inpaint_requires_mask(self, tiny_oracle):
        with pytest.raises(MaskError):
            apply_oracle(_tiny_img(20), tiny_oracle,
                         OracleConfig(strength=5, mode="inpaint"))


class TestFingerprint:
    def test_deterministic_and_sensitive(self):
        imgs = [_tiny_img(i) for i in range(3)]
        assert corpus_fingerprint(imgs) == corpus_fingerprint(imgs)
        changed = [imgs[0], imgs[1], (imgs[2] * 0.999).clamp(0, 1)]
        assert corpus_fingerprint(imgs) != corpus_fingerprint(changed)
