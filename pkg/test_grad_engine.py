"""
Tests for the inner-loop pieces: masks, smoothing, normalization, momentum, Adam and clipping
"""

import numpy as np
import pytest

from components.audio_core import AudioClip
from components.errors import ArgumentError, NumericError
from components.grad_engine import (
    AdamState,
    SmoothingConfig,
    adam_step,
    clip_perturbation,
    dropout_mask,
    draw_perturbations,
    finite_difference_gradient,
    momentum_accumulate,
    normalize_gradient,
    relative_error,
    scale_invariant_gradient,
    smooth_gradient,
)
from components.surrogate_models import ModelFactory


class ConstantGradientModel:
    def __init__(self, gradient):
        self.gradient = np.asarray(gradient, dtype=float)

    def input_gradient(self, clip, target):
        return self.gradient.copy()


@pytest.fixture
def mlp(rng):
    model = ModelFactory.create_model("MLP", 4)
    model.init_params(rng)
    return model


@pytest.fixture
def clip(rng):
    return AudioClip(rng.uniform(-0.3, 0.3, size=4000))


class TestDropoutMask:
    def test_p_zero(self, rng):
        assert np.all(dropout_mask(100, 0.0, rng) == 1.0)

    def test_p_one(self, rng):
        assert np.all(dropout_mask(100, 1.0, rng) == 0.0)

    def test_half(self):
        mask = dropout_mask(100_000, 0.5, np.random.default_rng(0))
        assert 0.49 <= np.mean(mask == 0.0) <= 0.51

    def test_out_of_range(self, rng):
        with pytest.raises(ArgumentError):
            dropout_mask(10, 1.5, rng)

    def test_shared_mask_across_rounds(self, rng):
        cfg = SmoothingConfig(rounds=3, mask_per_round=False)
        draws = draw_perturbations(50, cfg, rng)
        assert all(np.array_equal(draws[0][0], mask) for mask, _ in draws)


class TestSmoothGradient:
    def test_single_round_is_input_gradient(self, mlp, clip, rng):
        cfg = SmoothingConfig(rounds=1, noise=0.0, dropout=0.0)
        smoothed = smooth_gradient(mlp, clip, 2, cfg, rng=rng)
        assert np.array_equal(smoothed, mlp.input_gradient(clip, 2))

    def test_four_rounds_is_four_times(self, mlp, clip, rng):
        cfg = SmoothingConfig(rounds=4, noise=0.0, dropout=0.0)
        smoothed = smooth_gradient(mlp, clip, 1, cfg, rng=rng)
        assert np.allclose(smoothed, 4.0 * mlp.input_gradient(clip, 1), rtol=1e-12, atol=0.0)

    def test_full_dropout_gives_zero(self, mlp, clip, rng):
        cfg = SmoothingConfig(rounds=3, noise=0.01, dropout=1.0)
        assert np.all(smooth_gradient(mlp, clip, 0, cfg, rng=rng) == 0.0)

    def test_needs_rng_or_perturbations(self, mlp, clip):
        with pytest.raises(ArgumentError):
            smooth_gradient(mlp, clip, 0, SmoothingConfig())

    def test_shared_perturbations_are_reused(self, mlp, clip, rng):
        cfg = SmoothingConfig(rounds=2)
        draws = draw_perturbations(len(clip), cfg, rng)
        first = smooth_gradient(mlp, clip, 3, cfg, perturbations=draws)
        second = smooth_gradient(mlp, clip, 3, cfg, perturbations=draws)
        assert np.array_equal(first, second)

    def test_invalid_config(self):
        with pytest.raises(ArgumentError):
            SmoothingConfig(rounds=0)

    @pytest.mark.slow
    def test_dropout_average_follows_clean_gradient(self, surrogates, small_dataset):
        model = surrogates[0]
        clip = small_dataset.clips[0]
        target = 2
        clean = smooth_gradient(model, clip, target, SmoothingConfig(rounds=1, noise=0.0, dropout=0.0),
                                rng=np.random.default_rng(0))
        cfg = SmoothingConfig(rounds=16, noise=0.01, dropout=0.5)
        mean = np.mean([smooth_gradient(model, clip, target, cfg, rng=np.random.default_rng(seed)) / cfg.rounds
                        for seed in range(20)], axis=0)
        cosine = mean @ clean / (np.linalg.norm(mean) * np.linalg.norm(clean))
        assert cosine > 0.7


class TestNormalizeAndMomentum:
    def test_normalize_values(self):
        assert np.allclose(normalize_gradient([4.0, -4.0]), [1.0, -1.0])
        assert np.allclose(normalize_gradient([1.0, 2.0, 3.0]), [0.5, 1.0, 1.5])

    def test_normalize_zero(self):
        assert np.all(normalize_gradient(np.zeros(5)) == 0.0)

    def test_momentum(self):
        assert momentum_accumulate([5.0], [2.0], 0.0).tolist() == [2.0]
        assert momentum_accumulate([1.0], [2.0], 1.0).tolist() == [3.0]
        assert np.allclose(momentum_accumulate([2.0, 0.0], [0.0, 1.0], 0.9), [1.8, 1.0])

    def test_momentum_length_mismatch(self):
        with pytest.raises(ArgumentError):
            momentum_accumulate([1.0, 2.0], [1.0], 0.9)


class TestAdam:
    def test_first_step(self):
        state = AdamState.zeros(1, lr=0.01)
        _, update = adam_step(state, np.array([0.5]))
        assert update[0] == pytest.approx(0.0099999998, abs=1e-10)
        assert state.t == 1

    def test_zero_gradient_stays_zero(self):
        state = AdamState.zeros(3)
        for _ in range(5):
            _, update = adam_step(state, np.zeros(3))
            assert np.all(update == 0.0)

    def test_deterministic(self, rng):
        grads = rng.normal(size=(4, 6))
        a, b = AdamState.zeros(6), AdamState.zeros(6)
        for g in grads:
            _, ua = adam_step(a, g)
            _, ub = adam_step(b, g)
            assert np.array_equal(ua, ub)

    def test_non_finite_gradient(self):
        with pytest.raises(NumericError):
            adam_step(AdamState.zeros(2), np.array([np.nan, 0.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            adam_step(AdamState.zeros(2), np.zeros(3))


class TestClipPerturbation:
    def test_budget(self):
        orig = AudioClip(np.zeros(3))
        adv = AudioClip(np.array([0.3, -0.3, 0.05]))
        out = clip_perturbation(adv, orig, 0.1)
        assert np.allclose(out.samples, [0.1, -0.1, 0.05])

    def test_within_budget_unchanged(self, clip):
        adv = clip.with_samples(clip.samples + 0.01)
        assert np.array_equal(clip_perturbation(adv, clip, 0.05).samples, adv.samples)

    def test_valid_range(self):
        orig = AudioClip(np.array([0.95, -0.95]))
        adv = AudioClip(np.array([1.2, -1.2]))
        out = clip_perturbation(adv, orig, 0.12)
        assert out.samples.tolist() == [1.0, -1.0]

    def test_length_mismatch(self, clip):
        with pytest.raises(ArgumentError):
            clip_perturbation(AudioClip(np.zeros(3)), clip, 0.1)


class TestScaleInvariant:
    def test_chain_factors(self):
        model = ConstantGradientModel([1.0, -2.0])
        grad = scale_invariant_gradient(model, AudioClip(np.zeros(2)), 0, m_scales=4)
        assert np.allclose(grad, np.array([1.0, -2.0]) * (0.5 + 0.25 + 0.125 + 0.0625) / 4)

    def test_bad_scales(self, clip):
        with pytest.raises(ArgumentError):
            scale_invariant_gradient(ConstantGradientModel(np.zeros(4000)), clip, 0, m_scales=0)


class TestFiniteDifferences:
    def test_quadratic(self, rng):
        x = rng.normal(size=6)
        grad = finite_difference_gradient(lambda v: float(np.sum(v ** 2)), x)
        assert np.allclose(grad, 2 * x)

    def test_relative_error_floor(self):
        err = relative_error(np.array([0.0, 1.0]), np.array([0.0, 1.1]), floor=0.0)
        assert err[0] == 0.0
        assert err[1] == pytest.approx(0.1 / 1.1)
