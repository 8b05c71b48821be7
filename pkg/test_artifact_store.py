"""
Tests for run manifests, dataset directories and checkpoint directories
"""

import numpy as np
import pytest

from components.artifact_store import ArtifactStore, RunManifest, get_artifact_store
from components.dataset import generate_dataset
from components.errors import PreconditionError


def test_dataset_round_trip(tmp_path):
    dataset = generate_dataset(seed=2, n_classes=3, n_per_class=2, clip_seconds=0.05)
    store = ArtifactStore(str(tmp_path / "data"))
    manifest = store.save_dataset(dataset)
    assert manifest.command == "gen-data"
    assert len(manifest.outputs) == 6
    assert (tmp_path / "data" / "clips" / "c2_001.wav").exists()

    loaded = store.load_dataset()
    assert loaded.labels == dataset.labels
    assert loaded.n_classes == 3
    assert loaded.seed == 2
    for a, b in zip(loaded.clips, dataset.clips):
        assert np.max(np.abs(a.samples - b.samples)) <= 1 / 32768


def test_same_seed_same_manifest(tmp_path):
    for name in ("a", "b"):
        ArtifactStore(str(tmp_path / name)).save_dataset(
            generate_dataset(seed=5, n_classes=2, n_per_class=1, clip_seconds=0.05))
    first = (tmp_path / "a" / "manifest.json").read_text()
    assert first == (tmp_path / "b" / "manifest.json").read_text()


def test_models_round_trip(tmp_path, surrogates, target_models, carriers):
    store = ArtifactStore(str(tmp_path / "models"))
    manifest = store.save_models(surrogates, target_models, RunManifest(command="train", seeds={"train": 0}))
    assert len(manifest.outputs) == 5
    roles = [entry["role"] for entry in manifest.details["models"]]
    assert roles == ["surrogate"] * 3 + ["target"] * 2

    loaded_surrogates, loaded_targets = ArtifactStore(str(tmp_path / "models")).load_models()
    assert [m.name for m in loaded_surrogates] == [m.name for m in surrogates]
    assert [m.name for m in loaded_targets] == ["target-mlp", "target-conv"]
    assert all(m.trained for m in loaded_surrogates + loaded_targets)
    assert np.array_equal(loaded_targets[1].forward(carriers[0]), target_models[1].forward(carriers[0]))


def test_missing_manifest_does_not_create_directory(tmp_path):
    store = ArtifactStore(str(tmp_path / "nothing"))
    with pytest.raises(PreconditionError):
        store.read_manifest()
    assert not (tmp_path / "nothing").exists()


def test_wrong_manifest_kind(tmp_path):
    store = ArtifactStore(str(tmp_path))
    store.write_manifest(RunManifest(command="train"))
    with pytest.raises(PreconditionError):
        store.load_dataset()
    with pytest.raises(PreconditionError):
        store.load_models()


def test_unreadable_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(PreconditionError):
        ArtifactStore(str(tmp_path)).read_manifest()


def test_default_root(monkeypatch, tmp_path):
    monkeypatch.setenv("EADV_OUT", str(tmp_path))
    assert get_artifact_store().root == tmp_path
    assert get_artifact_store("elsewhere").root.name == "elsewhere"
