"""
Dataset Component for the ensemble attack toolkit
Generates the synthetic command-audio dataset and the music-like carriers attacks are embedded in
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from .audio_core import AudioClip
from .errors import ArgumentError

# Configure logging
logger = logging.getLogger(__name__)

BACKGROUND_NOISE = 0.05
TEMPLATE_AMPLITUDE = 0.25
N_HARMONICS = 3


@dataclass
class CommandDataset:
    """Balanced K-class command clips, class-major order"""

    clips: List[AudioClip]
    labels: List[int]
    n_classes: int
    seed: int
    n_per_class: int
    clip_seconds: float
    sample_rate: int = 16000

    def __len__(self) -> int:
        return len(self.clips)

    def class_counts(self) -> List[int]:
        return [self.labels.count(c) for c in range(self.n_classes)]


def class_template(c: int, n_classes: int):
    """
    Fundamental and harmonic amplitude profile of command class c

    Args:
        c: Class id
        n_classes: K, used to spread the decay rates over [0.3, 0.75]

    Returns:
        Tuple[float, np.ndarray]: fundamental in Hz and amplitudes of f0, 2f0, 3f0, 4f0
    """
    fundamental = 200.0 + 60.0 * c
    decay = 0.3 + 0.45 * (c / (n_classes - 1) if n_classes > 1 else 0.0)
    amplitudes = TEMPLATE_AMPLITUDE * decay ** np.arange(N_HARMONICS + 1)
    return fundamental, amplitudes


def _render_command(c: int, n_classes: int, n_samples: int, sample_rate: int,
                    rng: np.random.Generator) -> np.ndarray:
    fundamental, amplitudes = class_template(c, n_classes)
    t = np.arange(n_samples) / sample_rate
    gain = rng.uniform(0.8, 1.2)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=amplitudes.shape[0])
    wave = np.zeros(n_samples)
    for h, (amp, phase) in enumerate(zip(amplitudes, phases), start=1):
        wave += amp * np.sin(2.0 * np.pi * h * fundamental * t + phase)
    wave *= gain
    wave += rng.uniform(-BACKGROUND_NOISE, BACKGROUND_NOISE, size=n_samples)
    return np.clip(wave, -1.0, 1.0)


def generate_dataset(seed: int, n_classes: int = 4, n_per_class: int = 25,
                     clip_seconds: float = 4.0, sample_rate: int = 16000) -> CommandDataset:
    """
    Generate the synthetic command dataset

    Args:
        seed: Generation seed; equal seeds give bit-identical datasets
        n_classes: K >= 2
        n_per_class: Clips per class
        clip_seconds: Clip duration
        sample_rate: Sample rate in Hz

    Returns:
        CommandDataset: Balanced dataset in class-major order
    """
    if n_classes < 2:
        raise ArgumentError(f"need at least 2 classes, got {n_classes}")
    if n_per_class < 1:
        raise ArgumentError(f"need at least 1 clip per class, got {n_per_class}")

    rng = np.random.default_rng(seed)
    n_samples = int(round(clip_seconds * sample_rate))
    clips, labels = [], []
    for c in range(n_classes):
        for _ in range(n_per_class):
            samples = _render_command(c, n_classes, n_samples, sample_rate, rng)
            clips.append(AudioClip(samples, sample_rate, label=c))
            labels.append(c)

    logger.info(f"Generated dataset: {n_classes} classes x {n_per_class} clips of {clip_seconds}s (seed {seed})")
    return CommandDataset(clips, labels, n_classes, seed, n_per_class, clip_seconds, sample_rate)


def generate_carriers(seed: int, n: int = 5, clip_seconds: float = 4.0,
                      sample_rate: int = 16000) -> List[AudioClip]:
    """
    Generate music-like carrier clips

    Each carrier holds three partials in 500-3000 Hz with slow amplitude envelopes
    over the same background noise as the command clips.

    Args:
        seed: Generation seed
        n: Number of carriers
        clip_seconds: Carrier duration
        sample_rate: Sample rate in Hz

    Returns:
        List[AudioClip]: Unlabelled carriers
    """
    if n < 1:
        raise ArgumentError(f"need at least 1 carrier, got {n}")

    rng = np.random.default_rng(seed)
    n_samples = int(round(clip_seconds * sample_rate))
    t = np.arange(n_samples) / sample_rate
    carriers = []
    for _ in range(n):
        wave = np.zeros(n_samples)
        for _ in range(3):
            freq = rng.uniform(500.0, 3000.0)
            amp = rng.uniform(0.05, 0.15)
            rate = rng.uniform(0.5, 3.0)
            envelope = 0.75 + 0.25 * np.sin(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi))
            wave += amp * envelope * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
        wave += rng.uniform(-BACKGROUND_NOISE, BACKGROUND_NOISE, size=n_samples)
        carriers.append(AudioClip(np.clip(wave, -1.0, 1.0), sample_rate))

    logger.info(f"Generated {n} carriers of {clip_seconds}s (seed {seed})")
    return carriers
