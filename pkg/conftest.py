"""
Shared pytest fixtures: short-clip datasets, trained surrogates and black-box targets
"""

import os
import sys

import numpy as np
import pytest

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from components.audio_core import AudioClip  # noqa: E402
from components.blackbox import BlackBoxTarget, create_targets  # noqa: E402
from components.config import AttackConfig  # noqa: E402
from components.dataset import generate_carriers, generate_dataset  # noqa: E402
from components.surrogate_models import DEFAULT_ARCHS, train_surrogates  # noqa: E402

# 0.25 s keeps every front-end pass at 23 frames
SHORT_SECONDS = 0.25
N_CLASSES = 4


class LabelModel:
    """Stand-in classifier that reads its label from the first sample (label = round(10 * x[0]))"""

    trained = True

    def __init__(self, n_classes: int = N_CLASSES):
        self.n_classes = n_classes

    def predict(self, clip: AudioClip) -> int:
        return int(round(10.0 * clip.samples[0]))


def labelled_clip(label: int, n: int = 16) -> AudioClip:
    samples = np.zeros(n)
    samples[0] = label / 10.0
    return AudioClip(samples)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(seed=7, n_classes=N_CLASSES, n_per_class=10, clip_seconds=SHORT_SECONDS)


@pytest.fixture(scope="session")
def surrogates(small_dataset):
    return train_surrogates(small_dataset, DEFAULT_ARCHS, train_seed=0,
                            names=["surrogate-linear", "surrogate-mlp", "surrogate-conv"])


@pytest.fixture(scope="session")
def target_models(small_dataset):
    return train_surrogates(small_dataset, ["MLP", "CONV1D"], train_seed=1,
                            names=["target-mlp", "target-conv"])


@pytest.fixture
def targets(target_models):
    # fresh query counters per test
    return create_targets(target_models)


@pytest.fixture(scope="session")
def carriers():
    return generate_carriers(seed=3, n=2, clip_seconds=SHORT_SECONDS)


@pytest.fixture
def fast_config():
    return AttackConfig(iterations=12, rounds=2, query_every=4, lr=5e-3, seed=0)


@pytest.fixture
def label_targets():
    return [BlackBoxTarget("oracle-a", LabelModel()), BlackBoxTarget("oracle-b", LabelModel())]


class FullFixture:
    """Default-size fixture: 4 s clips, 3 surrogates, 2 held-out targets, 5 carriers x 4 commands"""

    def __init__(self, seed: int):
        dataset = generate_dataset(seed=seed)
        self.seed = seed
        self.surrogates = train_surrogates(dataset, DEFAULT_ARCHS, train_seed=seed,
                                           names=["surrogate-linear", "surrogate-mlp", "surrogate-conv"])
        self.target_models = train_surrogates(dataset, ["MLP", "CONV1D"], train_seed=seed + 1,
                                              names=["target-mlp", "target-conv"])
        self.carriers = generate_carriers(seed=seed, n=5)
        self.commands = list(range(N_CLASSES))

    def targets(self):
        return create_targets(self.target_models)


@pytest.fixture(scope="session")
def full_fixture():
    built = {}

    def build(seed: int = 0) -> FullFixture:
        if seed not in built:
            built[seed] = FullFixture(seed)
        return built[seed]

    return build
