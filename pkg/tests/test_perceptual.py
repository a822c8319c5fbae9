from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mamc.errors import ShapeError, SizeError
from mamc.perceptual import (
    EXTRACTOR_CHANNELS,
    EXTRACTOR_SEED,
    FeatureExtractor,
    default_extractor,
    embedding_distance_nchw,
    extract_features,
    generate_extractor_arrays,
    gram,
    gram_distance,
    gram_distance_nchw,
    gram_nchw,
    perceptual_distance,
    perceptual_distance_nchw,
)
from mamc.imagecore import to_chw

from _oracles import gram_bf, gram_distance_bf, perceptual_distance_bf
from conftest import seeded_image


def _nchw(seed: int, h: int = 16, w: int = 16) -> torch.Tensor:
    return to_chw(seeded_image(seed, h, w))


class TestExtractor:
    def test_asset_matches_generator(self):
        generated = generate_extractor_arrays(EXTRACTOR_SEED, EXTRACTOR_CHANNELS)
        ex = default_extractor()
        regenerated = FeatureExtractor(generated)
        x = _nchw(0)
        for a, b in zip(ex.features(x), regenerated.features(x)):
            assert torch.allclose(a, b)

    def test_level_shapes_halve(self):
        feats = default_extractor().features(_nchw(1, 32, 32))
        assert [tuple(f.shape) for f in feats] == [
            (1, 16, 16, 16), (1, 32, 8, 8), (1, 64, 4, 4)]

    def test_deterministic(self):
        x = _nchw(2)
        f1 = default_extractor().features(x)
        f2 = default_extractor().features(x)
        for a, b in zip(f1, f2):
            assert torch.equal(a, b)

    def test_rejects_bad_layout(self):
        with pytest.raises(ShapeError):
            default_extractor().features(torch.zeros(16, 16, 3))

    def test_rejects_too_small(self):
        with pytest.raises(SizeError):
            default_extractor().features(torch.zeros(1, 3, 4, 4))

    def test_differentiable(self):
        x = _nchw(3).requires_grad_(True)
        loss = perceptual_distance_nchw(x, _nchw(4))
        loss.backward()
        assert x.grad is not None and torch.isfinite(x.grad).all()


class TestGram:
    def test_matches_brute_force_exact(self):
        rng = np.random.RandomState(0)
        f = rng.randn(5, 4, 3).astype(np.float64)  # (h, w, c)
        ours = gram(torch.from_numpy(f)).numpy()
        np.testing.assert_allclose(ours, gram_bf(f), atol=1e-9, rtol=0)

    def test_nchw_batched(self):
        rng = np.random.RandomState(1)
        f = rng.randn(2, 3, 4, 5).astype(np.float64)
        out = gram_nchw(torch.from_numpy(f))
        assert out.shape == (2, 3, 3)
        for i in range(2):
            np.testing.assert_allclose(
                out[i].numpy(), gram_bf(np.transpose(f[i], (1, 2, 0))), atol=1e-9, rtol=0)

    def test_symmetric_psd(self):
        g = gram(torch.rand(6, 6, 4, dtype=torch.float64))
        np.testing.assert_allclose(g.numpy(), g.numpy().T, atol=1e-12)
        assert np.linalg.eigvalsh(g.numpy()).min() > -1e-12

    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            gram(torch.zeros(4, 4))


class TestPerceptualDistance:
    def test_identical_zero(self):
        x = _nchw(5)
        assert float(perceptual_distance_nchw(x, x)) == 0.0

    def test_matches_brute_force(self):
        a, b = seeded_image(6), seeded_image(7)
        ex = default_extractor()
        fa = [f.squeeze(0).double().numpy() for f in ex.features(to_chw(a))]
        fb = [f.squeeze(0).double().numpy() for f in ex.features(to_chw(b))]
        expected = perceptual_distance_bf(fa, fb)
        assert abs(float(perceptual_distance(a, b)) - expected) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            perceptual_distance_nchw(_nchw(8, 16, 16), _nchw(9, 16, 17))

    @given(st.integers(0, 10_000))
    @settings(max_examples=10, deadline=None)
    def test_symmetric_nonnegative(self, seed):
        a, b = _nchw(seed), _nchw(seed + 10_000)
        d1 = float(perceptual_distance_nchw(a, b))
        d2 = float(perceptual_distance_nchw(b, a))
        assert abs(d1 - d2) < 1e-9
        assert d1 >= 0.0


class TestGramDistance:
    def test_identical_zero(self):
        x = _nchw(10)
        # Epsilon-stabilized sqrt keeps the zero from being exact.
        assert float(gram_distance_nchw(x, x)) < 1e-9

    def test_matches_brute_force(self):
        a, b = seeded_image(11), seeded_image(12)
        ex = default_extractor()
        fa = [f.squeeze(0).double().numpy() for f in ex.features(to_chw(a))]
        fb = [f.squeeze(0).double().numpy() for f in ex.features(to_chw(b))]
        expected = gram_distance_bf(fa, fb)
        assert abs(float(gram_distance(a, b)) - expected) < 1e-6

    def test_symmetric(self):
        a, b = _nchw(13), _nchw(14)
        assert abs(float(gram_distance_nchw(a, b)) - float(gram_distance_nchw(b, a))) < 1e-9


class TestEmbeddingDistance:
    def test_identical_zero(self):
        x = _nchw(15)
        assert float(embedding_distance_nchw(x, x)) == 0.0

    def test_matches_manual_pooling(self):
        a, b = _nchw(16), _nchw(17)
        ex = default_extractor()
        ea = ex.features(a)[-1].mean(dim=(2, 3))
        eb = ex.features(b)[-1].mean(dim=(2, 3))
        expected = float(torch.sum((ea - eb) ** 2))
        assert abs(float(embedding_distance_nchw(a, b)) - expected) < 1e-7

    def test_symmetric_nonnegative(self):
        a, b = _nchw(18), _nchw(19)
        d = float(embedding_distance_nchw(a, b))
        assert d >= 0.0
        assert abs(d - float(embedding_distance_nchw(b, a))) < 1e-9


class TestImageWrappers:
    def test_extract_features_layout(self):
        feats = extract_features(seeded_image(20, 32, 32))
        assert [tuple(f.shape) for f in feats] == [
            (16, 16, 16), (8, 8, 32), (4, 4, 64)]
