"""
Artifact Store Component for the ensemble attack toolkit
Handles run manifests, dataset directories and model checkpoint directories on local disk
"""

import os
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Any, List, Optional, Tuple

from .audio_core import load_wav, save_wav
from .config import TOOL_VERSION
from .dataset import CommandDataset
from .errors import PreconditionError
from .surrogate_models import SurrogateModel, load_checkpoint, save_checkpoint

# Configure logging
logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CHECKPOINT_SUFFIX = ".eadv"


@dataclass
class RunManifest:
    """Everything needed to reproduce the artifacts of one directory"""

    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    tool_version: str = TOOL_VERSION
    config_hash: str = ""
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class ArtifactStore:
    """One output directory holding a manifest and its artifacts"""

    def __init__(self, root: str):
        """
        Initialize the store; the directory is created on first write

        Args:
            root: Directory to store artifacts in
        """
        self.root = Path(root)
        logger.debug(f"Initialized artifact store in: {self.root}")

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def _save_json(self, path: Path, data: Dict[str, Any]) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w") as f:
                json.dump(data, f, indent=2, sort_keys=True)
        except Exception as e:
            logger.error(f"Error saving {path}: {e}")
            raise

    def _load_json(self, path: Path) -> Dict[str, Any]:
        with open(path, "r") as f:
            return json.load(f)

    def write_manifest(self, manifest: RunManifest) -> Path:
        self._save_json(self.manifest_path, manifest.to_dict())
        logger.info(f"Wrote manifest for {manifest.command}: {self.manifest_path}")
        return self.manifest_path

    def read_manifest(self) -> RunManifest:
        if not self.manifest_path.exists():
            raise PreconditionError(f"no {MANIFEST_NAME} in {self.root}")
        try:
            return RunManifest.from_dict(self._load_json(self.manifest_path))
        except (json.JSONDecodeError, TypeError) as e:
            raise PreconditionError(f"unreadable manifest {self.manifest_path}: {e}") from e

    def path(self, *parts: str) -> Path:
        target = self.root.joinpath(*parts)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    # -- datasets -----------------------------------------------------------

    def save_dataset(self, dataset: CommandDataset) -> RunManifest:
        """
        Write every clip as WAV plus a manifest listing paths and labels

        Args:
            dataset: Generated dataset

        Returns:
            RunManifest: The manifest that was written
        """
        clips = []
        counters: Dict[int, int] = {}
        for clip, label in zip(dataset.clips, dataset.labels):
            index = counters.get(label, 0)
            counters[label] = index + 1
            relative = f"clips/c{label}_{index:03d}.wav"
            save_wav(clip, str(self.path(relative)))
            clips.append({"path": relative, "label": int(label)})

        manifest = RunManifest(
            command="gen-data",
            config={
                "n_classes": dataset.n_classes,
                "n_per_class": dataset.n_per_class,
                "clip_seconds": dataset.clip_seconds,
                "sample_rate": dataset.sample_rate,
            },
            seeds={"data": dataset.seed},
            outputs=[c["path"] for c in clips],
            details={"clips": clips},
        )
        self.write_manifest(manifest)
        return manifest

    def load_dataset(self) -> CommandDataset:
        """Read a dataset written by save_dataset"""
        manifest = self.read_manifest()
        if manifest.command != "gen-data":
            raise PreconditionError(f"{self.root} holds a {manifest.command} manifest, not a dataset")
        entries = manifest.details.get("clips", [])
        clips, labels = [], []
        for entry in entries:
            clip = load_wav(str(self.root / entry["path"]))
            clip.label = int(entry["label"])
            clips.append(clip)
            labels.append(int(entry["label"]))
        cfg = manifest.config
        logger.info(f"Loaded {len(clips)} clips from {self.root}")
        return CommandDataset(
            clips, labels, int(cfg["n_classes"]), int(manifest.seeds.get("data", 0)),
            int(cfg["n_per_class"]), float(cfg["clip_seconds"]), int(cfg.get("sample_rate", 16000)),
        )

    # -- models -------------------------------------------------------------

    def save_models(self, surrogates: List[SurrogateModel], targets: List[SurrogateModel],
                    manifest: RunManifest) -> RunManifest:
        """
        Write surrogate and target checkpoints and record them in the manifest

        Args:
            surrogates: White-box surrogates
            targets: Held-out models that will sit behind black-box queries
            manifest: Manifest to complete and write

        Returns:
            RunManifest: The written manifest
        """
        entries = []
        for role, models in (("surrogate", surrogates), ("target", targets)):
            for model in models:
                relative = f"{role}s/{model.name}{CHECKPOINT_SUFFIX}"
                save_checkpoint(model, str(self.path(relative)))
                entries.append({
                    "role": role,
                    "name": model.name,
                    "arch": model.arch,
                    "path": relative,
                    "train_accuracy": model.train_accuracy,
                })
        manifest.outputs = [e["path"] for e in entries]
        manifest.details["models"] = entries
        self.write_manifest(manifest)
        return manifest

    def load_models(self) -> Tuple[List[SurrogateModel], List[SurrogateModel]]:
        """
        Read the checkpoints listed in a train manifest

        Returns:
            Tuple[List[SurrogateModel], List[SurrogateModel]]: Surrogates and target models
        """
        manifest = self.read_manifest()
        entries = manifest.details.get("models")
        if not entries:
            raise PreconditionError(f"{self.root} has no model checkpoints in its manifest")
        surrogates, targets = [], []
        for entry in entries:
            model = load_checkpoint(str(self.root / entry["path"]), name=entry["name"])
            (surrogates if entry["role"] == "surrogate" else targets).append(model)
        logger.info(f"Loaded {len(surrogates)} surrogates and {len(targets)} targets from {self.root}")
        return surrogates, targets


def get_artifact_store(root: Optional[str] = None) -> ArtifactStore:
    """
    Get an artifact store for root, or for EADV_OUT (default ./runs)

    Returns:
        ArtifactStore: Store rooted at the resolved directory
    """
    return ArtifactStore(root or os.getenv("EADV_OUT", "./runs"))
