"""
Tests for the surrogate classifiers, their training, checkpoints and black-box wrapping
"""

import numpy as np
import pytest

from components.audio_core import AudioClip, log_mel_features
from components.blackbox import BlackBoxTarget, create_targets, query_targets
from components.dataset import class_template, generate_carriers, generate_dataset
from components.errors import ArgumentError, PreconditionError, TrainingDivergedError
from components.grad_engine import finite_difference_gradient, relative_error
from components.surrogate_models import (
    DEFAULT_ARCHS,
    ModelFactory,
    gradient_similarity,
    load_checkpoint,
    require_trained,
    save_checkpoint,
    train_surrogates,
)


def initialized_model(arch, clip, seed=5):
    """Random-init model standardized on the clip's own features"""
    model = ModelFactory.create_model(arch, 4)
    model.init_params(np.random.default_rng(seed))
    raw = log_mel_features(clip).frames
    model.feat_mean = raw.mean(axis=0)
    model.feat_scale = raw.std(axis=0) + 1.0
    return model


@pytest.fixture
def clip(rng):
    return AudioClip(rng.uniform(-0.3, 0.3, size=4000))


class TestDataset:
    def test_counts_and_order(self):
        dataset = generate_dataset(seed=1, n_classes=4, n_per_class=5, clip_seconds=0.1)
        assert len(dataset) == 20
        assert dataset.class_counts() == [5, 5, 5, 5]
        assert dataset.labels == sorted(dataset.labels)

    def test_deterministic(self):
        a = generate_dataset(seed=3, n_classes=2, n_per_class=2, clip_seconds=0.1)
        b = generate_dataset(seed=3, n_classes=2, n_per_class=2, clip_seconds=0.1)
        assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a.clips, b.clips))

    def test_needs_two_classes(self):
        with pytest.raises(ArgumentError):
            generate_dataset(seed=0, n_classes=1)

    def test_templates_differ(self):
        f0, amps = class_template(0, 4)
        f3, amps3 = class_template(3, 4)
        assert f0 != f3
        assert not np.allclose(amps, amps3)

    def test_nearest_centroid_separates_fresh_draw(self):
        def spectra(dataset):
            return np.vstack([np.abs(np.fft.rfft(c.samples)) for c in dataset.clips])

        train = generate_dataset(seed=11, n_classes=4, n_per_class=10, clip_seconds=0.25)
        fresh = generate_dataset(seed=12, n_classes=4, n_per_class=10, clip_seconds=0.25)
        train_spec = spectra(train)
        labels = np.asarray(train.labels)
        centroids = np.vstack([train_spec[labels == c].mean(axis=0) for c in range(4)])
        fresh_spec = spectra(fresh)
        distances = np.linalg.norm(fresh_spec[:, None, :] - centroids[None, :, :], axis=2)
        accuracy = np.mean(distances.argmin(axis=1) == np.asarray(fresh.labels))
        assert accuracy > 0.9

    def test_carriers_in_range(self):
        carriers = generate_carriers(seed=0, n=3, clip_seconds=0.1)
        assert len(carriers) == 3
        assert all(np.max(np.abs(c.samples)) <= 1.0 for c in carriers)


class TestForward:
    def test_zero_model_uniform(self, clip):
        for arch in DEFAULT_ARCHS:
            model = ModelFactory.create_model(arch, 4)
            assert np.all(model.forward(clip) == 0.0)
            assert np.allclose(model.probabilities(clip), 0.25)
            assert model.loss(clip, 2) == pytest.approx(np.log(4.0))

    def test_zero_head_gives_zero_gradient(self, clip):
        model = ModelFactory.create_model("MEANPOOL-LINEAR", 4)
        assert np.all(model.input_gradient(clip, 1) == 0.0)

    def test_tail_samples_get_zero_gradient(self, clip):
        model = initialized_model("MEANPOOL-LINEAR", clip)
        grad = model.input_gradient(clip, 0)
        # 23 frames cover samples [0, 3920)
        assert np.all(grad[3920:] == 0.0)
        assert np.any(grad[:3920] != 0.0)

    def test_target_out_of_range(self, clip):
        model = ModelFactory.create_model("MLP", 4)
        with pytest.raises(ArgumentError):
            model.loss(clip, 4)

    def test_conv_pads_short_clips(self, rng):
        short = AudioClip(rng.uniform(-0.3, 0.3, size=800))
        model = initialized_model("CONV1D", short)
        assert model.forward(short).shape == (4,)
        assert model.input_gradient(short, 1).shape == (800,)

    def test_unknown_arch(self):
        with pytest.raises(ArgumentError):
            ModelFactory.create_model("TRANSFORMER", 4)
        assert ModelFactory.canonical_arch("conv1d") == "CONV1D"


@pytest.mark.parametrize("arch", DEFAULT_ARCHS)
def test_input_gradient_matches_finite_differences(arch, clip, rng):
    model = initialized_model(arch, clip)
    target = 2
    analytic = model.input_gradient(clip, target)
    coords = rng.choice(3920, size=100, replace=False)
    numeric = finite_difference_gradient(
        lambda v: model.loss(clip.with_samples(v), target), clip.samples, coords, step=1e-4,
    )
    errors = relative_error(analytic[coords], numeric, floor=1e-8)
    assert np.sum(errors >= 1e-4) <= 1


@pytest.mark.parametrize("arch_index", [0, 1, 2])
def test_trained_input_gradient_matches_finite_differences(arch_index, surrogates, small_dataset):
    model = surrogates[arch_index]
    rng = np.random.default_rng(arch_index)
    picks = rng.choice(len(small_dataset), size=20, replace=False)
    failures = checked = 0
    for index in picks:
        clip = small_dataset.clips[index]
        target = int(rng.integers(4))
        analytic = model.input_gradient(clip, target)
        coords = rng.choice(3920, size=50, replace=False)
        numeric = finite_difference_gradient(
            lambda v: model.loss(clip.with_samples(v), target), clip.samples, coords, step=1e-4,
        )
        failures += int(np.sum(relative_error(analytic[coords], numeric, floor=1e-8) >= 1e-4))
        checked += coords.size
    assert failures <= 0.01 * checked


@pytest.mark.parametrize("arch", DEFAULT_ARCHS)
def test_parameter_gradient_matches_finite_differences(arch, clip):
    model = initialized_model(arch, clip)
    raw = log_mel_features(clip).frames
    z = model.standardize(raw)
    logits, cache = model.head_forward(z)
    upstream = np.array([0.3, -0.1, 0.5, -0.7])
    _, grads = model.head_backward(cache, upstream)
    analytic = model.flatten_grads(grads)

    flat = model.get_flat()

    def objective(v):
        model.set_flat(v)
        return float(model.head_forward(z)[0] @ upstream)

    coords = np.random.default_rng(0).choice(flat.shape[0], size=min(30, flat.shape[0]), replace=False)
    numeric = finite_difference_gradient(objective, flat, coords, step=1e-5)
    model.set_flat(flat)
    assert np.allclose(analytic[coords], numeric, rtol=1e-5, atol=1e-8)


class TestTraining:
    def test_surrogates_fit_training_set(self, surrogates, small_dataset):
        for model in surrogates:
            assert model.trained
            assert model.accuracy(small_dataset.clips, small_dataset.labels) >= 0.8

    def test_same_seed_same_parameters(self, small_dataset):
        kwargs = dict(archs=["MLP"], train_seed=4, max_epochs=2, min_accuracy=0.0)
        a = train_surrogates(small_dataset, **kwargs)[0]
        b = train_surrogates(small_dataset, **kwargs)[0]
        assert np.array_equal(a.get_flat(), b.get_flat())

    def test_different_seeds_differ(self, small_dataset, carriers):
        a = train_surrogates(small_dataset, ["MLP"], train_seed=4, max_epochs=2, min_accuracy=0.0)[0]
        b = train_surrogates(small_dataset, ["MLP"], train_seed=5, max_epochs=2, min_accuracy=0.0)[0]
        assert not np.allclose(a.forward(carriers[0]), b.forward(carriers[0]))

    def test_divergence_raises(self, small_dataset):
        with pytest.raises(TrainingDivergedError) as err:
            train_surrogates(small_dataset, ["MEANPOOL-LINEAR"], max_epochs=1, min_accuracy=1.01)
        assert err.value.exit_status == 3

    def test_require_trained(self):
        with pytest.raises(PreconditionError):
            require_trained([ModelFactory.create_model("MLP", 4)])

    def test_gradient_similarity(self, surrogates, carriers):
        sim = gradient_similarity(surrogates, carriers[0], 1)
        assert sim.shape == (3, 3)
        assert np.allclose(np.diag(sim), 1.0)
        assert np.allclose(sim, sim.T)

    @pytest.mark.slow
    def test_default_dataset_converges(self):
        dataset = generate_dataset(seed=0)
        for model in train_surrogates(dataset):
            assert model.train_accuracy >= 0.95


class TestCheckpoints:
    def test_round_trip(self, tmp_path, surrogates, carriers):
        for model in surrogates:
            path = tmp_path / f"{model.name}.eadv"
            save_checkpoint(model, str(path))
            loaded = load_checkpoint(str(path))
            assert loaded.arch == model.arch
            assert loaded.name == model.name
            assert loaded.trained
            assert loaded.train_accuracy == model.train_accuracy
            assert np.array_equal(loaded.forward(carriers[0]), model.forward(carriers[0]))

    def test_untrained_stays_untrained(self, tmp_path):
        path = tmp_path / "blank.eadv"
        save_checkpoint(ModelFactory.create_model("MLP", 3), str(path))
        loaded = load_checkpoint(str(path))
        assert not loaded.trained
        assert loaded.n_classes == 3

    def test_missing(self, tmp_path):
        with pytest.raises(PreconditionError):
            load_checkpoint(str(tmp_path / "missing.eadv"))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.eadv"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ArgumentError):
            load_checkpoint(str(path))

    def test_truncated(self, tmp_path, surrogates):
        path = tmp_path / "cut.eadv"
        save_checkpoint(surrogates[0], str(path))
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(ArgumentError):
            load_checkpoint(str(path))


class TestBlackBox:
    def test_untrained_rejected(self):
        with pytest.raises(PreconditionError):
            BlackBoxTarget("blank", ModelFactory.create_model("MLP", 4))

    def test_query_counts(self, target_models, carriers):
        target = BlackBoxTarget("t", target_models[0])
        first = target.query(carriers[0])
        second = target.query(carriers[0])
        assert first == second
        assert target.queries == 2

    def test_training_clips_keep_labels(self, target_models, small_dataset):
        target = BlackBoxTarget("t", target_models[1])
        hits = sum(target.query(c) == y for c, y in zip(small_dataset.clips, small_dataset.labels))
        assert hits / len(small_dataset) >= 0.8

    def test_hides_the_model(self, target_models):
        target = BlackBoxTarget("t", target_models[0])
        assert not hasattr(target, "model")
        with pytest.raises(AttributeError):
            target.params = {}

    def test_query_targets(self, targets, carriers):
        labels = query_targets(targets, carriers[0])
        assert set(labels) == {"target-mlp", "target-conv"}
        assert all(t.queries == 1 for t in targets)

    def test_create_targets_names(self, target_models):
        named = create_targets(target_models, names=["a", "b"])
        assert [t.name for t in named] == ["a", "b"]
