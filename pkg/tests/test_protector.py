from __future__ import annotations

import pytest
import torch

from mamc.container import IntegrityError, load_container, save_container
from mamc.protector import (
    Checkpoint,
    load_checkpoint,
    parameter_count,
    protect,
    save_checkpoint,
)
from mamc.unet import UNetSpec, build_unet

from conftest import seeded_image


def _model(seed: int = 0):
    return build_unet(UNetSpec(depth=2, base_channels=4, output_squash="residual"), seed=seed)


class TestProtect:
    def test_output_is_valid_image(self):
        img = seeded_image(0, 16, 16)
        out = protect(img, _model())
        assert out.shape == (16, 16, 3)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_deterministic(self):
        img = seeded_image(1, 16, 16)
        m = _model()
        assert torch.equal(protect(img, m), protect(img, m))


class TestParameterCount:
    def test_positive_and_matches_model(self):
        spec = UNetSpec(depth=2, base_channels=4)
        n = parameter_count(spec)
        assert n == sum(p.numel() for p in build_unet(spec, seed=3).parameters())
        assert n > 0

    def test_grows_with_width(self):
        assert parameter_count(UNetSpec(depth=2, base_channels=8)) > parameter_count(
            UNetSpec(depth=2, base_channels=4))


class TestCheckpointRoundTrip:
    def test_round_trip(self, tmp_path):
        model = _model(5)
        p = tmp_path / "ck.mamc"
        history = {"total": [1.0, 0.5], "noise": [0.2, 0.1]}
        whash = save_checkpoint(p, model, level=50, oracle_hash="abc123", epoch=2,
                                train_config={"seed": 5}, loss_history=history)
        ck = load_checkpoint(p)
        assert isinstance(ck, Checkpoint)
        assert ck.level == 50
        assert ck.oracle_hash == "abc123"
        assert ck.epoch == 2
        assert ck.train_config == {"seed": 5}
        assert ck.loss_history == history
        assert ck.weights_hash == whash
        assert ck.spec == model.spec
        img = seeded_image(2, 16, 16)
        assert torch.equal(protect(img, ck.model), protect(img, model))

    def test_oracle_hash_mismatch_warns(self, tmp_path):
        p = tmp_path / "ck.mamc"
        save_checkpoint(p, _model(), level=10, oracle_hash="aaaa" * 16, epoch=1)
        ck = load_checkpoint(p, expected_oracle_hash="bbbb" * 16)
        assert any("oracle hash mismatch" in w for w in ck.load_report.warnings)

    def test_matching_oracle_hash_no_warning(self, tmp_path):
        p = tmp_path / "ck.mamc"
        save_checkpoint(p, _model(), level=10, oracle_hash="aaaa" * 16, epoch=1)
        ck = load_checkpoint(p, expected_oracle_hash="aaaa" * 16)
        assert ck.load_report.warnings == []

    def test_rejects_wrong_kind(self, tmp_path):
        p = tmp_path / "other.mamc"
        save_container(p, {}, {"kind": "oracle-weights"})
        with pytest.raises(IntegrityError, match="not a protector checkpoint"):
            load_checkpoint(p)

    def test_rejects_missing_fields(self, tmp_path):
        p = tmp_path / "ck.mamc"
        save_checkpoint(p, _model(), level=50, oracle_hash="x", epoch=1)
        arrays, meta = load_container(p)
        del meta["level"]
        save_container(p, arrays, meta)
        with pytest.raises(IntegrityError, match="level"):
            load_checkpoint(p)

    def test_rejects_tampered_weights_hash(self, tmp_path):
        p = tmp_path / "ck.mamc"
        save_checkpoint(p, _model(), level=50, oracle_hash="x", epoch=1)
        arrays, meta = load_container(p)
        meta["weights_hash"] = "0" * 64
        save_container(p, arrays, meta)
        with pytest.raises(IntegrityError, match="weights_hash"):
            load_checkpoint(p)

    def test_rejects_spec_array_mismatch(self, tmp_path):
        p = tmp_path / "ck.mamc"
        save_checkpoint(p, _model(), level=50, oracle_hash="x", epoch=1)
        arrays, meta = load_container(p)
        meta["spec"]["base_channels"] = 8  # arrays were built at width 4
        from mamc.container import weights_hash as wh

        meta["weights_hash"] = wh(arrays)
        save_container(p, arrays, meta)
        with pytest.raises(IntegrityError, match="do not match spec"):
            load_checkpoint(p)
