"""
Gradient Engine Component for the ensemble attack toolkit
Dropout masks, smoothed gradients, normalization, momentum, Adam and perturbation clipping.
These are the pieces of the inner attack loop shared by every strategy.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .audio_core import AudioClip, NoiseSpec
from .errors import ArgumentError, NumericError

# Configure logging
logger = logging.getLogger(__name__)

E_NORM = 1e-12


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one parameter vector"""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, length: int, lr: float = 5e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(length), np.zeros(length), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, g: np.ndarray) -> Tuple[AdamState, np.ndarray]:
    """
    One bias-corrected Adam step; the state is updated in place

    Args:
        state: Moment estimates owned by the caller
        g: Gradient, same length as the moments

    Returns:
        Tuple[AdamState, np.ndarray]: The state and the update to subtract
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.m.shape:
        raise ArgumentError(f"gradient shape {g.shape} != Adam state shape {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to Adam")

    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)

    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, update


@dataclass
class SmoothingConfig:
    """M rounds of noise-and-dropout smoothing followed by momentum"""

    rounds: int = 4
    noise: float = 0.01
    dropout: float = 0.5
    momentum: float = 0.9
    mask_per_round: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ArgumentError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ArgumentError(f"dropout must be in [0, 1], got {self.dropout}")
        if self.noise < 0 or self.momentum < 0:
            raise ArgumentError("noise and momentum must be >= 0")

    @classmethod
    def from_attack_config(cls, cfg, dropout: Optional[float] = None) -> "SmoothingConfig":
        return cls(
            rounds=cfg.rounds,
            noise=cfg.noise,
            dropout=cfg.dropout if dropout is None else dropout,
            momentum=cfg.momentum,
            mask_per_round=cfg.mask_per_round,
        )


Perturbation = Tuple[np.ndarray, np.ndarray]


def dropout_mask(length: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """
    Bernoulli zero-mask without 1/(1-p) rescaling

    Args:
        length: Mask length
        p: Probability that an entry is zero
        rng: Random generator

    Returns:
        np.ndarray: Entries in {0.0, 1.0}
    """
    if not 0.0 <= p <= 1.0:
        raise ArgumentError(f"dropout p must be in [0, 1], got {p}")
    return (rng.random(length) >= p).astype(np.float64)


def draw_perturbations(length: int, cfg: SmoothingConfig,
                       rng: np.random.Generator) -> List[Perturbation]:
    """Draw the M (mask, noise) pairs of one smoothing pass"""
    noise = NoiseSpec(cfg.noise)
    shared_mask = None if cfg.mask_per_round else dropout_mask(length, cfg.dropout, rng)
    draws = []
    for _ in range(cfg.rounds):
        mask = dropout_mask(length, cfg.dropout, rng) if shared_mask is None else shared_mask
        draws.append((mask, noise.sample(length, rng)))
    return draws


def smooth_gradient(model, x_adv: AudioClip, target: int, cfg: SmoothingConfig,
                    rng: Optional[np.random.Generator] = None,
                    perturbations: Optional[Sequence[Perturbation]] = None) -> np.ndarray:
    """
    Sum of input gradients over M masked and noised copies of the iterate

    Args:
        model: Surrogate exposing input_gradient()
        x_adv: Current iterate
        target: Target command id
        cfg: Smoothing parameters
        rng: Used to draw perturbations when none are supplied
        perturbations: Pre-drawn (mask, noise) pairs, shared across models

    Returns:
        np.ndarray: Raw (unnormalized) gradient w.r.t. x_adv
    """
    if perturbations is None:
        if rng is None:
            raise ArgumentError("smooth_gradient needs either rng or perturbations")
        perturbations = draw_perturbations(len(x_adv), cfg, rng)

    total = np.zeros(len(x_adv))
    for mask, noise in perturbations:
        perturbed = x_adv.with_samples(x_adv.samples * mask + noise)
        # chain rule through the mask
        total += mask * model.input_gradient(perturbed, target)
    return total


def normalize_gradient(g: np.ndarray, e_norm: float = E_NORM) -> np.ndarray:
    """Divide by the mean absolute entry (guarded against zero)"""
    g = np.asarray(g, dtype=np.float64)
    if g.size == 0:
        return g.copy()
    return g / (np.mean(np.abs(g)) + e_norm)


def momentum_accumulate(g_prev: np.ndarray, g_t: np.ndarray, mu: float) -> np.ndarray:
    """mu * g_prev + g_t"""
    g_prev = np.asarray(g_prev, dtype=np.float64)
    g_t = np.asarray(g_t, dtype=np.float64)
    if g_prev.shape != g_t.shape:
        raise ArgumentError(f"momentum length mismatch: {g_prev.shape} vs {g_t.shape}")
    return mu * g_prev + g_t


def clip_perturbation(x_adv: AudioClip, x_orig: AudioClip, epsilon: float) -> AudioClip:
    """
    Project into the L-infinity ball around the original, then into [-1, 1]

    Args:
        x_adv: Candidate iterate
        x_orig: Original carrier
        epsilon: Per-sample budget

    Returns:
        AudioClip: Projected iterate
    """
    if len(x_adv) != len(x_orig):
        raise ArgumentError(f"length mismatch: {len(x_adv)} vs {len(x_orig)}")
    if epsilon < 0:
        raise ArgumentError(f"epsilon must be >= 0, got {epsilon}")
    lower = x_orig.samples - epsilon
    upper = x_orig.samples + epsilon
    projected = np.clip(np.clip(x_adv.samples, lower, upper), -1.0, 1.0)
    return x_adv.with_samples(projected)


def scale_invariant_gradient(model, x_adv: AudioClip, target: int, m_scales: int = 4) -> np.ndarray:
    """
    Mean gradient over the scale copies x/2, x/4, ..., x/2**m

    Args:
        model: Surrogate exposing input_gradient()
        x_adv: Current iterate
        target: Target command id
        m_scales: Number of scale copies

    Returns:
        np.ndarray: Gradient w.r.t. x_adv (each term carries its 1/2**i chain factor)
    """
    if m_scales < 1:
        raise ArgumentError(f"m_scales must be >= 1, got {m_scales}")
    total = np.zeros(len(x_adv))
    for i in range(1, m_scales + 1):
        scaled = x_adv.with_samples(np.ldexp(x_adv.samples, -i))
        total += np.ldexp(model.input_gradient(scaled, target), -i)
    return total / m_scales


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def finite_difference_gradient(func: Callable[[np.ndarray], float], x: np.ndarray,
                               coords: Optional[Sequence[int]] = None,
                               step: float = 1e-4) -> np.ndarray:
    """
    Central-difference gradient of a scalar function

    Args:
        func: Scalar function of a vector
        x: Evaluation point
        coords: Coordinates to differentiate; all when None
        step: Difference step

    Returns:
        np.ndarray: One derivative per requested coordinate
    """
    x = np.asarray(x, dtype=np.float64)
    coords = range(x.shape[0]) if coords is None else coords
    grad = []
    shifted = x.copy()
    for j in coords:
        shifted[j] = x[j] + step
        f_plus = func(shifted)
        shifted[j] = x[j] - step
        f_minus = func(shifted)
        shifted[j] = x[j]
        grad.append((f_plus - f_minus) / (2.0 * step))
    return np.asarray(grad)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Entrywise |a - n| / max(|a|, |n|, floor)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    scale = np.where(scale == 0.0, 1.0, scale)
    return np.abs(analytic - numeric) / scale
