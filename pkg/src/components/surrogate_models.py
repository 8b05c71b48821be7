"""
Surrogate Models Component for the ensemble attack toolkit
Handles the three differentiable command classifiers (MEANPOOL-LINEAR, MLP, CONV1D),
their training, checkpoints, and exact input gradients through the log-mel front-end
"""

import struct
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from .audio_core import AudioClip, get_front_end
from .config import FeatureConfig, DEFAULT_FEATURES
from .errors import ArgumentError, PreconditionError, TrainingDivergedError
from .grad_engine import AdamState, adam_step

# Configure logging
logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"EADV"
CHECKPOINT_VERSION = 1
SCALE_FLOOR = 1e-6


class SurrogateModel(ABC):
    """Classifier on standardized log-mel features with an analytic backward pass"""

    arch: str = ""
    param_names: Tuple[str, ...] = ()

    def __init__(self, n_classes: int, feature_config: FeatureConfig = DEFAULT_FEATURES,
                 name: Optional[str] = None):
        """
        Initialize a model with all-zero parameters

        Args:
            n_classes: Number of command classes K
            feature_config: Front-end constants the model reads features with
            name: Optional display name
        """
        if n_classes < 2:
            raise ArgumentError(f"need at least 2 classes, got {n_classes}")
        self.n_classes = n_classes
        self.feature_config = feature_config
        self.name = name or self.arch.lower()
        bins = feature_config.mel_bins
        self.params: Dict[str, np.ndarray] = {
            key: np.zeros(shape) for key, shape in self.param_shapes(bins).items()
        }
        self.feat_mean = np.zeros(bins)
        self.feat_scale = np.ones(bins)
        self.trained = False
        self.train_accuracy: Optional[float] = None

    @abstractmethod
    def param_shapes(self, bins: int) -> Dict[str, Tuple[int, ...]]:
        """Shapes of the parameter tensors, in checkpoint order"""
        pass

    @abstractmethod
    def init_params(self, rng: np.random.Generator) -> None:
        """Random initialization before training"""
        pass

    @abstractmethod
    def head_forward(self, z: np.ndarray) -> Tuple[np.ndarray, Any]:
        """Logits from standardized F x B features, plus a cache for head_backward"""
        pass

    @abstractmethod
    def head_backward(self, cache: Any, grad_logits: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """Gradients w.r.t. the standardized features and every parameter"""
        pass

    # -- features ---------------------------------------------------------

    def _glorot(self, rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.feat_mean) / self.feat_scale

    def raw_features(self, clip: AudioClip):
        return get_front_end(self.feature_config).forward(clip.samples)

    # -- inference --------------------------------------------------------

    def forward(self, clip: AudioClip) -> np.ndarray:
        """K logits for a clip"""
        raw, _ = self.raw_features(clip)
        logits, _ = self.head_forward(self.standardize(raw))
        return logits

    def probabilities(self, clip: AudioClip) -> np.ndarray:
        return softmax(self.forward(clip))

    def predict(self, clip: AudioClip) -> int:
        return int(np.argmax(self.forward(clip)))

    def _check_target(self, target: int) -> None:
        if not 0 <= target < self.n_classes:
            raise ArgumentError(f"target {target} outside [0, {self.n_classes - 1}]")

    def loss(self, clip: AudioClip, target: int) -> float:
        """Cross-entropy of the target class"""
        self._check_target(target)
        return float(-log_softmax(self.forward(clip))[target])

    def backward(self, clip: AudioClip, grad_logits: np.ndarray) -> np.ndarray:
        """
        Input gradient for an arbitrary upstream logit gradient

        Args:
            clip: Clip at which the Jacobian is evaluated
            grad_logits: dL/dlogits, length K

        Returns:
            np.ndarray: dL/dsamples, same length as the clip
        """
        grad_logits = np.asarray(grad_logits, dtype=np.float64)
        if grad_logits.shape != (self.n_classes,):
            raise ArgumentError(f"grad_logits shape {grad_logits.shape} != ({self.n_classes},)")
        front_end = get_front_end(self.feature_config)
        raw, fe_cache = front_end.forward(clip.samples)
        _, head_cache = self.head_forward(self.standardize(raw))
        grad_z, _ = self.head_backward(head_cache, grad_logits)
        return front_end.backward(fe_cache, grad_z / self.feat_scale)

    def input_gradient(self, clip: AudioClip, target: int) -> np.ndarray:
        """Exact d(cross-entropy)/d(samples)"""
        self._check_target(target)
        logits = self.forward(clip)
        grad_logits = softmax(logits)
        grad_logits[target] -= 1.0
        return self.backward(clip, grad_logits)

    def accuracy(self, clips: Sequence[AudioClip], labels: Sequence[int]) -> float:
        if not clips:
            raise ArgumentError("accuracy of an empty clip set")
        hits = sum(self.predict(c) == int(y) for c, y in zip(clips, labels))
        return hits / len(clips)

    # -- flat parameter view used by the optimizer ------------------------

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_names])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for key in self.param_names:
            size = self.params[key].size
            self.params[key] = flat[offset:offset + size].reshape(self.params[key].shape).copy()
            offset += size

    def flatten_grads(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in self.param_names])

    def tensors(self) -> Dict[str, np.ndarray]:
        """All tensors that go into a checkpoint"""
        out = {k: self.params[k] for k in self.param_names}
        out["feat_mean"] = self.feat_mean
        out["feat_scale"] = self.feat_scale
        if self.trained and self.train_accuracy is not None:
            out["train_accuracy"] = np.array([self.train_accuracy])
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, K={self.n_classes}, trained={self.trained})"


class MeanPoolLinearModel(SurrogateModel):
    """Linear map of time-averaged features"""

    arch = "MEANPOOL-LINEAR"
    param_names = ("W", "b")

    def param_shapes(self, bins):
        return {"W": (self.n_classes, bins), "b": (self.n_classes,)}

    def init_params(self, rng):
        bins = self.feature_config.mel_bins
        self.params["W"] = self._glorot(rng, (self.n_classes, bins), bins)
        self.params["b"] = np.zeros(self.n_classes)

    def head_forward(self, z):
        pooled = z.mean(axis=0)
        return self.params["W"] @ pooled + self.params["b"], (z.shape[0], pooled)

    def head_backward(self, cache, grad_logits):
        n_frames, pooled = cache
        grads = {"W": np.outer(grad_logits, pooled), "b": grad_logits.copy()}
        grad_pooled = self.params["W"].T @ grad_logits
        return np.tile(grad_pooled / n_frames, (n_frames, 1)), grads


class MLPModel(SurrogateModel):
    """One tanh hidden layer on time-averaged features"""

    arch = "MLP"
    param_names = ("W1", "b1", "W2", "b2")
    hidden = 64

    def param_shapes(self, bins):
        return {
            "W1": (self.hidden, bins),
            "b1": (self.hidden,),
            "W2": (self.n_classes, self.hidden),
            "b2": (self.n_classes,),
        }

    def init_params(self, rng):
        bins = self.feature_config.mel_bins
        self.params["W1"] = self._glorot(rng, (self.hidden, bins), bins)
        self.params["b1"] = np.zeros(self.hidden)
        self.params["W2"] = self._glorot(rng, (self.n_classes, self.hidden), self.hidden)
        self.params["b2"] = np.zeros(self.n_classes)

    def head_forward(self, z):
        pooled = z.mean(axis=0)
        h = np.tanh(self.params["W1"] @ pooled + self.params["b1"])
        return self.params["W2"] @ h + self.params["b2"], (z.shape[0], pooled, h)

    def head_backward(self, cache, grad_logits):
        n_frames, pooled, h = cache
        grad_h = self.params["W2"].T @ grad_logits
        grad_a = grad_h * (1.0 - h * h)
        grads = {
            "W1": np.outer(grad_a, pooled),
            "b1": grad_a,
            "W2": np.outer(grad_logits, h),
            "b2": grad_logits.copy(),
        }
        grad_pooled = self.params["W1"].T @ grad_a
        return np.tile(grad_pooled / n_frames, (n_frames, 1)), grads


class Conv1DModel(SurrogateModel):
    """Width-5 convolution over frames, tanh, mean-pool, linear head"""

    arch = "CONV1D"
    param_names = ("Wc", "bc", "Wh", "bh")
    channels = 8
    width = 5

    def param_shapes(self, bins):
        return {
            "Wc": (self.channels, self.width, bins),
            "bc": (self.channels,),
            "Wh": (self.n_classes, self.channels),
            "bh": (self.n_classes,),
        }

    def init_params(self, rng):
        bins = self.feature_config.mel_bins
        self.params["Wc"] = self._glorot(rng, (self.channels, self.width, bins), self.width * bins)
        self.params["bc"] = np.zeros(self.channels)
        self.params["Wh"] = self._glorot(rng, (self.n_classes, self.channels), self.channels)
        self.params["bh"] = np.zeros(self.n_classes)

    def head_forward(self, z):
        n_frames = z.shape[0]
        if n_frames < self.width:
            z = np.vstack([z, np.zeros((self.width - n_frames, z.shape[1]))])
        # (positions, bins, width)
        windows = sliding_window_view(z, self.width, axis=0)
        h = np.tanh(np.einsum("tbw,cwb->tc", windows, self.params["Wc"]) + self.params["bc"])
        pooled = h.mean(axis=0)
        logits = self.params["Wh"] @ pooled + self.params["bh"]
        return logits, (n_frames, z.shape[0], windows, h, pooled)

    def head_backward(self, cache, grad_logits):
        n_frames, n_padded, windows, h, pooled = cache
        n_pos = h.shape[0]
        grad_pooled = self.params["Wh"].T @ grad_logits
        grad_a = (grad_pooled / n_pos)[None, :] * (1.0 - h * h)
        grads = {
            "Wc": np.einsum("tc,tbw->cwb", grad_a, windows),
            "bc": grad_a.sum(axis=0),
            "Wh": np.outer(grad_logits, pooled),
            "bh": grad_logits.copy(),
        }
        contrib = np.einsum("tc,cwb->twb", grad_a, self.params["Wc"])
        grad_z = np.zeros((n_padded, windows.shape[1]))
        for w in range(self.width):
            grad_z[w:w + n_pos] += contrib[:, w, :]
        return grad_z[:n_frames], grads


class ModelFactory:
    """Factory class to create surrogate model instances"""

    # Architecture configurations; index feeds the per-architecture training seed
    ARCH_CONFIGS = {
        "MEANPOOL-LINEAR": {"class": MeanPoolLinearModel, "index": 0},
        "MLP": {"class": MLPModel, "index": 1},
        "CONV1D": {"class": Conv1DModel, "index": 2},
    }

    @staticmethod
    def canonical_arch(arch: str) -> str:
        key = arch.upper().replace("_", "-")
        if key not in ModelFactory.ARCH_CONFIGS:
            raise ArgumentError(f"Unsupported architecture: {arch}")
        return key

    @staticmethod
    def create_model(arch: str, n_classes: int, feature_config: FeatureConfig = DEFAULT_FEATURES,
                     name: Optional[str] = None) -> SurrogateModel:
        """
        Create an untrained, all-zero model

        Args:
            arch: MEANPOOL-LINEAR, MLP or CONV1D (case-insensitive)
            n_classes: Number of command classes
            feature_config: Front-end constants
            name: Optional display name

        Returns:
            SurrogateModel: Model instance
        """
        key = ModelFactory.canonical_arch(arch)
        model_class = ModelFactory.ARCH_CONFIGS[key]["class"]
        return model_class(n_classes, feature_config, name)

    @staticmethod
    def get_available_archs() -> List[str]:
        return list(ModelFactory.ARCH_CONFIGS)


DEFAULT_ARCHS = ModelFactory.get_available_archs()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _standardization(features: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    stacked = np.vstack(features)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), SCALE_FLOOR)


def _feature_accuracy(model: SurrogateModel, features: List[np.ndarray], labels: np.ndarray) -> float:
    preds = [int(np.argmax(model.head_forward(z)[0])) for z in features]
    return float(np.mean(np.asarray(preds) == labels))


def train_model(model: SurrogateModel, features: List[np.ndarray], labels: Sequence[int],
                rng: np.random.Generator, lr: float = 1e-3, batch_size: int = 8,
                max_epochs: int = 200, target_accuracy: float = 0.95) -> float:
    """
    Mini-batch Adam on cross-entropy over precomputed standardized features

    Args:
        model: Model with initialized parameters and standardization set
        features: Standardized F x B feature matrices, one per clip
        labels: Class ids
        rng: Drives the batch order
        lr: Adam learning rate
        batch_size: Clips per step
        max_epochs: Epoch cap
        target_accuracy: Stop once training accuracy reaches this

    Returns:
        float: Final training accuracy
    """
    labels = np.asarray(labels, dtype=int)
    n = len(features)
    state = AdamState.zeros(model.get_flat().shape[0], lr=lr)
    accuracy = _feature_accuracy(model, features, labels)

    for epoch in range(max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            grad = np.zeros_like(state.m)
            for i in batch:
                logits, cache = model.head_forward(features[i])
                grad_logits = softmax(logits)
                grad_logits[labels[i]] -= 1.0
                _, param_grads = model.head_backward(cache, grad_logits)
                grad += model.flatten_grads(param_grads)
            _, update = adam_step(state, grad / len(batch))
            model.set_flat(model.get_flat() - update)

        accuracy = _feature_accuracy(model, features, labels)
        logger.debug(f"{model.name} epoch {epoch + 1}: train accuracy {accuracy:.3f}")
        if accuracy >= target_accuracy:
            break

    return accuracy


def train_surrogates(dataset, archs: Sequence[str] = DEFAULT_ARCHS, train_seed: int = 0,
                     lr: float = 1e-3, batch_size: int = 8, max_epochs: int = 200,
                     min_accuracy: float = 0.80, names: Optional[Sequence[str]] = None,
                     feature_config: FeatureConfig = DEFAULT_FEATURES) -> List[SurrogateModel]:
    """
    Train one model per architecture on a command dataset

    Args:
        dataset: CommandDataset
        archs: Architecture tags
        train_seed: Seed; each architecture draws from its own stream
        lr: Adam learning rate
        batch_size: Clips per Adam step
        max_epochs: Epoch cap
        min_accuracy: Below this training accuracy the run counts as diverged
        names: Optional display names, one per architecture
        feature_config: Front-end constants

    Returns:
        List[SurrogateModel]: Trained models in the order of archs
    """
    if len(dataset) == 0:
        raise ArgumentError("cannot train on an empty dataset")
    if names is not None and len(names) != len(archs):
        raise ArgumentError(f"{len(names)} names for {len(archs)} architectures")

    front_end = get_front_end(feature_config)
    raw = [front_end.forward(clip.samples)[0] for clip in dataset.clips]
    mean, scale = _standardization(raw)
    features = [(r - mean) / scale for r in raw]

    models = []
    for i, arch in enumerate(archs):
        key = ModelFactory.canonical_arch(arch)
        model = ModelFactory.create_model(key, dataset.n_classes, feature_config,
                                          names[i] if names else None)
        rng = np.random.default_rng([train_seed, ModelFactory.ARCH_CONFIGS[key]["index"]])
        model.feat_mean = mean.copy()
        model.feat_scale = scale.copy()
        model.init_params(rng)

        try:
            accuracy = train_model(model, features, dataset.labels, rng, lr, batch_size, max_epochs)
        except Exception as e:
            logger.error(f"Error training {model.name}: {e}")
            raise

        if accuracy < min_accuracy:
            logger.error(f"{model.name} diverged at {accuracy:.3f} training accuracy")
            raise TrainingDivergedError(model.name, accuracy)

        model.trained = True
        model.train_accuracy = accuracy
        logger.info(f"Trained {model.name} ({key}, seed {train_seed}): accuracy {accuracy:.3f}")
        models.append(model)

    return models


def require_trained(models: Sequence[SurrogateModel]) -> None:
    untrained = [m.name for m in models if not m.trained]
    if untrained:
        raise PreconditionError(f"models not trained: {untrained}")


def gradient_similarity(models: Sequence[SurrogateModel], clip: AudioClip, target: int) -> np.ndarray:
    """
    Pairwise cosine similarity of the models' input gradients

    Args:
        models: Surrogates
        clip: Evaluation point
        target: Target command

    Returns:
        np.ndarray: K x K matrix; pairs with a zero gradient score 0
    """
    grads = np.vstack([m.input_gradient(clip, target) for m in models])
    norms = np.linalg.norm(grads, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = grads / safe[:, None]
    sim = unit @ unit.T
    sim[norms == 0.0, :] = 0.0
    sim[:, norms == 0.0] = 0.0
    return sim


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _pack_str(text: str) -> bytes:
    raw = text.encode("ascii")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(model: SurrogateModel, path: str) -> None:
    """
    Write a model in the EADV binary format

    Args:
        model: Model to save
        path: Destination file
    """
    tensors = model.tensors()
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        _pack_str(model.arch),
        struct.pack("<II", model.n_classes, len(tensors)),
    ]
    for key, tensor in tensors.items():
        tensor = np.ascontiguousarray(tensor, dtype="<f8")
        parts.append(_pack_str(key))
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.tobytes(order="C"))

    try:
        Path(path).write_bytes(b"".join(parts))
    except Exception as e:
        logger.error(f"Error writing checkpoint {path}: {e}")
        raise
    logger.debug(f"Saved {model.name} to {path}")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise ArgumentError(f"truncated checkpoint {self.path}")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def array(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.offset + size > len(self.data):
            raise ArgumentError(f"truncated checkpoint {self.path}")
        values = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float64)

    def string(self) -> str:
        (length,) = self.take("<H")
        return bytes(self.take(f"<{length}s")[0]).decode("ascii")


def load_checkpoint(path: str, name: Optional[str] = None,
                    feature_config: FeatureConfig = DEFAULT_FEATURES) -> SurrogateModel:
    """
    Read a model written by save_checkpoint

    Args:
        path: Checkpoint file
        name: Optional display name; defaults to the file stem
        feature_config: Front-end constants

    Returns:
        SurrogateModel: Restored model; trained iff the checkpoint records a training accuracy
    """
    file_path = Path(path)
    if not file_path.exists():
        raise PreconditionError(f"checkpoint not found: {path}")

    reader = _Reader(file_path.read_bytes(), str(path))
    magic = reader.take("<4s")[0]
    if magic != CHECKPOINT_MAGIC:
        raise ArgumentError(f"{path} is not an EADV checkpoint")
    (version,) = reader.take("<I")
    if version != CHECKPOINT_VERSION:
        raise ArgumentError(f"unsupported checkpoint version {version} in {path}")

    arch = reader.string()
    n_classes, n_tensors = reader.take("<II")
    model = ModelFactory.create_model(arch, n_classes, feature_config, name or file_path.stem)

    tensors = {}
    for _ in range(n_tensors):
        key = reader.string()
        (ndim,) = reader.take("<B")
        shape = reader.take(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        tensors[key] = reader.array(count).reshape(shape)

    for key in model.param_names:
        if key not in tensors:
            raise ArgumentError(f"checkpoint {path} is missing tensor {key}")
        if tensors[key].shape != model.params[key].shape:
            raise ArgumentError(f"tensor {key} has shape {tensors[key].shape}, expected {model.params[key].shape}")
        model.params[key] = tensors[key]
    model.feat_mean = tensors.get("feat_mean", model.feat_mean)
    model.feat_scale = tensors.get("feat_scale", model.feat_scale)
    if "train_accuracy" in tensors:
        model.trained = True
        model.train_accuracy = float(tensors["train_accuracy"][0])

    logger.debug(f"Loaded {model!r} from {path}")
    return model
