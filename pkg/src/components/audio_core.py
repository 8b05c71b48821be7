"""
Audio Core Component for the ensemble attack toolkit
Handles WAV I/O, noise and silence manipulation, scale copies, resampling,
and the differentiable log-mel front-end through which every model gradient flows
"""

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import soundfile as sf
import librosa
from scipy import signal

from .config import FeatureConfig, DEFAULT_FEATURES
from .errors import ArgumentError, AudioFormatError

# Configure logging
logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
DEFAULT_SILENCE_FRAME = 128


@dataclass
class AudioClip:
    """Mono waveform in normalized units with its sample rate"""

    samples: np.ndarray
    sample_rate: int = 16000
    label: Optional[int] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ArgumentError(f"AudioClip samples must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ArgumentError(f"sample_rate must be > 0, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return replace(self, samples=samples)


@dataclass
class FeatureMatrix:
    """F x B log-mel energies of a clip"""

    frames: np.ndarray
    frame_length: int
    hop: int
    mel_bins: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames.shape


@dataclass
class NoiseSpec:
    """Uniform noise on (-A, A), amplitude in normalized sample units"""

    amplitude: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ArgumentError(f"noise amplitude must be >= 0, got {self.amplitude}")

    @classmethod
    def from_pcm16(cls, level: float) -> "NoiseSpec":
        return cls(level / PCM16_SCALE)

    def density(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.amplitude == 0:
            return np.zeros_like(u)
        inside = (u > -self.amplitude) & (u < self.amplitude)
        return np.where(inside, 1.0 / (2.0 * self.amplitude), 0.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.amplitude, self.amplitude, size=n)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def load_wav(path: str) -> AudioClip:
    """
    Load a PCM16 mono WAV file

    Args:
        path: Path to the WAV file

    Returns:
        AudioClip: Samples divided by 32768, sample rate from the header
    """
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"WAV file not found: {path}")

    try:
        info = sf.info(str(file_path))
    except (RuntimeError, sf.SoundFileError) as e:
        raise AudioFormatError("header", f"cannot parse {path}: {e}") from e

    if info.format != "WAV":
        raise AudioFormatError("format", f"expected WAV, got {info.format}")
    if info.channels != 1:
        raise AudioFormatError("channels", f"expected mono, got {info.channels} channels")
    if info.subtype != "PCM_16":
        raise AudioFormatError("subtype", f"expected PCM_16, got {info.subtype}")

    data, sample_rate = sf.read(str(file_path), dtype="int16", always_2d=False)
    samples = data.astype(np.float64) / PCM16_SCALE
    logger.debug(f"Loaded {path}: {samples.shape[0]} samples at {sample_rate} Hz")
    return AudioClip(samples, int(sample_rate))


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(scaled, -32768, 32767).astype(np.int16)


def save_wav(clip: AudioClip, path: str) -> None:
    """
    Write a clip as PCM16 mono WAV

    Args:
        clip: Clip to save; samples outside [-1, 1] are clamped
        path: Destination path
    """
    try:
        sf.write(str(path), quantize_pcm16(clip.samples), clip.sample_rate,
                 subtype="PCM_16", format="WAV")
    except (RuntimeError, sf.SoundFileError) as e:
        logger.error(f"Error writing {path}: {e}")
        raise OSError(f"Cannot write WAV to {path}: {e}") from e


def clip_samples(clip: AudioClip) -> AudioClip:
    """Clamp every sample to [-1, 1]"""
    return clip.with_samples(np.clip(clip.samples, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Waveform manipulation
# ---------------------------------------------------------------------------

def add_uniform_noise(clip: AudioClip, amplitude: float, rng: np.random.Generator) -> AudioClip:
    """
    Add i.i.d. U(-A, A) noise to every sample; the result is not clipped

    Args:
        clip: Input clip
        amplitude: A >= 0 in normalized units
        rng: Random generator owned by the caller

    Returns:
        AudioClip: Noisy copy
    """
    noise = NoiseSpec(amplitude).sample(len(clip), rng)
    return clip.with_samples(clip.samples + noise)


def frame_count(clip: AudioClip, frame_len: int = DEFAULT_SILENCE_FRAME) -> int:
    return len(clip) // frame_len


def insert_silence_frames(clip: AudioClip, positions: Sequence[int],
                          frame_len: int = DEFAULT_SILENCE_FRAME) -> AudioClip:
    """
    Insert all-zero frames at frame boundaries

    Args:
        clip: Input clip
        positions: Frame indices in [0, F]; repeats insert several frames at one boundary
        frame_len: Frame length in samples

    Returns:
        AudioClip: Lengthened clip; pre-existing samples keep their values
    """
    if frame_len < 1:
        raise ArgumentError(f"frame_len must be >= 1, got {frame_len}")
    n_frames = frame_count(clip, frame_len)
    positions = [int(p) for p in positions]
    bad = [p for p in positions if p < 0 or p > n_frames]
    if bad:
        raise ArgumentError(f"silence positions {bad} outside [0, {n_frames}]")
    if not positions:
        return clip.with_samples(clip.samples.copy())

    offsets = np.repeat(np.asarray(sorted(positions)) * frame_len, frame_len)
    return clip.with_samples(np.insert(clip.samples, offsets, 0.0))


def random_silence_positions(clip: AudioClip, count: int, rng: np.random.Generator,
                             frame_len: int = DEFAULT_SILENCE_FRAME) -> List[int]:
    """Draw distinct insertion positions uniformly from [0, F], sorted"""
    n_positions = frame_count(clip, frame_len) + 1
    if count > n_positions:
        raise ArgumentError(f"cannot pick {count} distinct positions from {n_positions}")
    picked = rng.choice(n_positions, size=count, replace=False)
    return sorted(int(p) for p in picked)


def scale_copy(clip: AudioClip, i: int) -> AudioClip:
    """Multiply every sample by 1/2**i (exact in floating point)"""
    if i < 0:
        raise ArgumentError(f"scale index must be >= 0, got {i}")
    return clip.with_samples(np.ldexp(clip.samples, -int(i)))


def _lowpass(samples: np.ndarray, cutoff: float, rate: float) -> np.ndarray:
    sos = signal.butter(10, cutoff, btype="low", fs=rate, output="sos")
    if samples.shape[0] <= 3 * (2 * sos.shape[0] + 1):
        return samples
    return signal.sosfiltfilt(sos, samples)


def resample(clip: AudioClip, new_rate: int, num_samples: Optional[int] = None,
             antialias: bool = False) -> AudioClip:
    """
    Linear-interpolation resampling

    Args:
        clip: Input clip
        new_rate: Target sample rate in Hz
        num_samples: Output length; defaults to round(len * new_rate / old_rate)
        antialias: Band-limit to 0.45 x the lower rate before decimating and after interpolating

    Returns:
        AudioClip: Resampled clip at new_rate
    """
    if new_rate <= 0:
        raise ArgumentError(f"new_rate must be > 0, got {new_rate}")
    old_rate = clip.sample_rate
    n_in = len(clip)
    n_out = int(round(n_in * new_rate / old_rate)) if num_samples is None else int(num_samples)

    if new_rate == old_rate and n_out == n_in:
        return replace(clip, samples=clip.samples.copy())

    samples = clip.samples
    cutoff = 0.45 * min(old_rate, new_rate)
    if antialias and new_rate < old_rate:
        samples = _lowpass(samples, cutoff, old_rate)

    positions = np.arange(n_out) * (old_rate / new_rate)
    out = np.interp(positions, np.arange(n_in), samples)

    if antialias and new_rate > old_rate:
        out = _lowpass(out, cutoff, new_rate)
    return AudioClip(out, int(new_rate), clip.label)


# ---------------------------------------------------------------------------
# Differentiable front-end
# ---------------------------------------------------------------------------

@dataclass
class FrontEndCache:
    """Intermediates of one forward pass, consumed by the backward pass"""

    n_samples: int
    indices: np.ndarray
    real: np.ndarray
    imag: np.ndarray
    energy: np.ndarray


class FeatureFrontEnd:
    """Hann window -> DFT power -> mel filterbank -> log, with an exact adjoint"""

    def __init__(self, config: FeatureConfig = DEFAULT_FEATURES):
        """
        Build the fixed matrices of the front-end

        Args:
            config: Frame geometry, mel bins and log floor
        """
        self.config = config
        length = config.frame_length
        self.window = signal.get_window("hann", length, fftbins=True)

        # DFT as two real matrices so the adjoint is a transpose
        n = np.arange(length)[:, None]
        k = np.arange(length // 2 + 1)[None, :]
        phase = 2.0 * np.pi * n * k / length
        self.dft_cos = np.cos(phase)
        self.dft_sin = -np.sin(phase)

        self.mel = librosa.filters.mel(
            sr=config.sample_rate,
            n_fft=length,
            n_mels=config.mel_bins,
            fmin=config.fmin,
            fmax=config.fmax,
            htk=True,
            norm=None,
        ).astype(np.float64)

        logger.debug(f"Initialized front-end: {config.to_dict()}")

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.config.frame_length:
            return 0
        return (n_samples - self.config.frame_length) // self.config.hop + 1

    def frame_indices(self, n_samples: int) -> np.ndarray:
        n_frames = self.n_frames(n_samples)
        if n_frames < 1:
            raise ArgumentError(
                f"clip of {n_samples} samples is shorter than one frame ({self.config.frame_length})"
            )
        starts = np.arange(n_frames) * self.config.hop
        return starts[:, None] + np.arange(self.config.frame_length)[None, :]

    def forward(self, samples: np.ndarray) -> Tuple[np.ndarray, FrontEndCache]:
        """
        Compute log-mel features and keep what the backward pass needs

        Args:
            samples: 1-D waveform

        Returns:
            Tuple[np.ndarray, FrontEndCache]: F x B features and the cache
        """
        indices = self.frame_indices(samples.shape[0])
        windowed = samples[indices] * self.window
        real = windowed @ self.dft_cos
        imag = windowed @ self.dft_sin
        energy = (real * real + imag * imag) @ self.mel.T
        features = np.log(self.config.e_floor + energy)
        return features, FrontEndCache(samples.shape[0], indices, real, imag, energy)

    def backward(self, cache: FrontEndCache, grad_features: np.ndarray) -> np.ndarray:
        """
        Pull a feature-space gradient back to the waveform

        Args:
            cache: Intermediates from forward()
            grad_features: dL/dfeatures, F x B

        Returns:
            np.ndarray: dL/dsamples
        """
        expected = cache.energy.shape
        if grad_features.shape != expected:
            raise ArgumentError(f"grad_features shape {grad_features.shape} != features shape {expected}")

        grad_energy = grad_features / (self.config.e_floor + cache.energy)
        grad_power = grad_energy @ self.mel
        grad_windowed = (2.0 * cache.real * grad_power) @ self.dft_cos.T
        grad_windowed += (2.0 * cache.imag * grad_power) @ self.dft_sin.T
        grad_frames = grad_windowed * self.window
        return np.bincount(cache.indices.ravel(), weights=grad_frames.ravel(),
                           minlength=cache.n_samples)


@lru_cache(maxsize=8)
def get_front_end(config: FeatureConfig = DEFAULT_FEATURES) -> FeatureFrontEnd:
    """Shared front-end per feature configuration"""
    return FeatureFrontEnd(config)


def log_mel_features(clip: AudioClip, config: FeatureConfig = DEFAULT_FEATURES) -> FeatureMatrix:
    """
    Log-mel features of a clip

    Args:
        clip: Input clip, at least one frame long
        config: Front-end constants

    Returns:
        FeatureMatrix: F x B log energies
    """
    features, _ = get_front_end(config).forward(clip.samples)
    return FeatureMatrix(features, config.frame_length, config.hop, config.mel_bins)


def feature_backprop(clip: AudioClip, grad_features: np.ndarray,
                     config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """
    Exact adjoint of log_mel_features at this clip

    Args:
        clip: Clip at which the Jacobian is evaluated
        grad_features: dL/dfeatures, F x B
        config: Front-end constants

    Returns:
        np.ndarray: dL/dsamples
    """
    front_end = get_front_end(config)
    _, cache = front_end.forward(clip.samples)
    return front_end.backward(cache, np.asarray(grad_features, dtype=np.float64))
