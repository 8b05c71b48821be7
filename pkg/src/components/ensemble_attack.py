"""
Ensemble Attack Component for the ensemble attack toolkit
Handles the random and gradient-weighted ensemble strategies, loss/logit/prediction-level
ensembling, the dropout self-ensemble, and the full iterative attack loop
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .audio_core import (
    AudioClip,
    get_front_end,
    insert_silence_frames,
    load_wav,
    random_silence_positions,
    save_wav,
)
from .config import AttackConfig, EnsembleLevel, Strategy, get_attack_config
from .errors import ArgumentError, NumericError
from .grad_engine import (
    AdamState,
    SmoothingConfig,
    adam_step,
    clip_perturbation,
    draw_perturbations,
    momentum_accumulate,
    normalize_gradient,
    scale_invariant_gradient,
    smooth_gradient,
)
from .surrogate_models import require_trained

# Configure logging
logger = logging.getLogger(__name__)

ALPHA_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    """What happened in one outer iteration"""

    iteration: int
    losses: List[float]
    grad_norms: List[float]
    linf: float
    chosen: Optional[int] = None
    weights: Optional[List[float]] = None
    uniform_fallback: bool = False


@dataclass
class ProbeRecord:
    iteration: int
    target: str
    label: int


@dataclass
class AttackResult:
    """Adversarial clip plus everything needed to score and reproduce it"""

    adversarial: AudioClip
    target: int
    strategy: str
    config: Dict[str, Any]
    config_hash: str
    model_names: List[str]
    iterations: List[IterationRecord] = field(default_factory=list)
    whitebox_success: Dict[str, bool] = field(default_factory=dict)
    probes: List[ProbeRecord] = field(default_factory=list)
    queries: int = 0
    final_linf: float = 0.0
    final_l2: float = 0.0
    carrier_index: Optional[int] = None
    silence_positions: List[int] = field(default_factory=list)
    stopped_early: bool = False
    original: Optional[AudioClip] = None

    @property
    def linf_trajectory(self) -> List[float]:
        return [rec.linf for rec in self.iterations]

    @property
    def fooled_all_surrogates(self) -> bool:
        return bool(self.whitebox_success) and all(self.whitebox_success.values())

    def probe_success(self, target_name: str) -> bool:
        """True if any periodic probe of this target returned the intended command"""
        return any(p.label == self.target for p in self.probes if p.target == target_name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "strategy": self.strategy,
            "config": self.config,
            "config_hash": self.config_hash,
            "model_names": self.model_names,
            "sample_rate": self.adversarial.sample_rate,
            "n_samples": len(self.adversarial),
            "iterations": [asdict(rec) for rec in self.iterations],
            "whitebox_success": self.whitebox_success,
            "probes": [asdict(p) for p in self.probes],
            "queries": self.queries,
            "final_linf": self.final_linf,
            "final_l2": self.final_l2,
            "carrier_index": self.carrier_index,
            "silence_positions": self.silence_positions,
            "stopped_early": self.stopped_early,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], adversarial: AudioClip) -> "AttackResult":
        return cls(
            adversarial=adversarial,
            target=int(data["target"]),
            strategy=data["strategy"],
            config=data["config"],
            config_hash=data["config_hash"],
            model_names=list(data["model_names"]),
            iterations=[IterationRecord(**rec) for rec in data.get("iterations", [])],
            whitebox_success=dict(data.get("whitebox_success", {})),
            probes=[ProbeRecord(**p) for p in data.get("probes", [])],
            queries=int(data.get("queries", 0)),
            final_linf=float(data.get("final_linf", 0.0)),
            final_l2=float(data.get("final_l2", 0.0)),
            carrier_index=data.get("carrier_index"),
            silence_positions=list(data.get("silence_positions", [])),
            stopped_early=bool(data.get("stopped_early", False)),
        )


# ---------------------------------------------------------------------------
# Ensemble strategies
# ---------------------------------------------------------------------------

def _dgwe(grad_norms: Sequence[float], sigma: float) -> Tuple[np.ndarray, bool]:
    norms = np.asarray(grad_norms, dtype=np.float64)
    if norms.ndim != 1 or norms.size == 0:
        raise ArgumentError("dgwe_weights needs a non-empty vector of norms")
    if np.any(norms < 0) or not np.all(np.isfinite(norms)):
        raise ArgumentError(f"gradient norms must be finite and >= 0, got {norms}")
    if sigma <= 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")

    with np.errstate(over="ignore"):
        exponents = norms ** (1.0 / sigma ** 2)
    finite = np.isfinite(exponents)
    if not finite.any():
        return np.full(norms.size, 1.0 / norms.size), True
    if finite.all() and np.all(exponents == exponents[0]):
        return np.full(norms.size, 1.0 / norms.size), False

    # softmax shifts by the smallest exponent, so large norms keep their ratios
    return softmax(-exponents), False


def dgwe_weights(grad_norms: Sequence[float], sigma: float = 1.0) -> np.ndarray:
    """
    Weights exp(-||g_i||^(1/sigma^2)), normalized to sum to 1

    Args:
        grad_norms: Euclidean norm of each model's gradient
        sigma: Smoothness; 1 by default

    Returns:
        np.ndarray: One weight per model; uniform if every exponent overflows
    """
    weights, fallback = _dgwe(grad_norms, sigma)
    if fallback:
        logger.warning(f"DGWE exponents overflowed for norms {list(grad_norms)}; using uniform weights")
    return weights


def rge_select(n_models: int, rng: np.random.Generator) -> int:
    """Uniform model index in [0, n_models)"""
    if n_models < 1:
        raise ArgumentError(f"need at least one model, got {n_models}")
    return int(rng.integers(n_models))


@dataclass
class EnsembleChoice:
    gradient: np.ndarray
    chosen: Optional[int] = None
    weights: Optional[np.ndarray] = None
    uniform_fallback: bool = False


def combine_gradients(strategy: Strategy, per_model_grads: Sequence[np.ndarray], sigma: float,
                      rng: np.random.Generator) -> EnsembleChoice:
    """
    Combine per-model gradients with RGE or DGWE and report how

    Args:
        strategy: Strategy.RGE or Strategy.DGWE
        per_model_grads: Equal-length gradients, one per model
        sigma: DGWE smoothness
        rng: RGE index generator

    Returns:
        EnsembleChoice: Combined gradient with the chosen index or the weights
    """
    if len(per_model_grads) == 0:
        raise ArgumentError("ensemble_gradient needs at least one gradient")
    if len({np.shape(g) for g in per_model_grads}) != 1:
        raise ArgumentError("per-model gradients differ in length")
    grads = np.vstack([np.asarray(g, dtype=np.float64) for g in per_model_grads])

    strategy = Strategy(strategy)
    if strategy == Strategy.RGE:
        index = rge_select(grads.shape[0], rng)
        return EnsembleChoice(grads[index].copy(), chosen=index)
    if strategy == Strategy.DGWE:
        weights, fallback = _dgwe(np.linalg.norm(grads, axis=1), sigma)
        if fallback:
            logger.debug("DGWE exponents overflowed; using uniform weights")
        if np.all(weights == weights[0]):
            combined = np.mean(grads, axis=0)
        else:
            combined = weights @ grads
        return EnsembleChoice(combined, weights=weights, uniform_fallback=fallback)
    raise ArgumentError(f"{strategy.value} is not a gradient-ensemble strategy")


def ensemble_gradient(strategy: Strategy, per_model_grads: Sequence[np.ndarray], sigma: float,
                      rng: np.random.Generator) -> np.ndarray:
    """RGE picks one gradient at random; DGWE takes the norm-weighted sum"""
    return combine_gradients(strategy, per_model_grads, sigma, rng).gradient


def _check_alpha(alpha: Sequence[float], n_models: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (n_models,):
        raise ArgumentError(f"{alpha.size} ensemble weights for {n_models} models")
    if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > ALPHA_TOLERANCE:
        raise ArgumentError(f"ensemble weights must be >= 0 and sum to 1, got {alpha.tolist()}")
    return alpha


def ensemble_loss(level: EnsembleLevel, alpha: Sequence[float], models: Sequence,
                  clip: AudioClip, target: int) -> float:
    """
    Ensemble the models at the prediction, logit or loss level

    Args:
        level: EnsembleLevel
        alpha: Non-negative weights summing to 1
        models: Surrogates
        clip: Input clip
        target: Target command

    Returns:
        float: Cross-entropy of the ensemble
    """
    alpha = _check_alpha(alpha, len(models))
    level = EnsembleLevel(level)
    logits = [m.forward(clip) for m in models]

    if level == EnsembleLevel.LOSS:
        return float(sum(a * -log_softmax(z)[target] for a, z in zip(alpha, logits)))
    if level == EnsembleLevel.LOGITS:
        fused = sum(a * z for a, z in zip(alpha, logits))
        return float(-log_softmax(fused)[target])
    prob = sum(a * softmax(z)[target] for a, z in zip(alpha, logits))
    return float(-np.log(prob))


def ensemble_loss_gradient(level: EnsembleLevel, alpha: Sequence[float], models: Sequence,
                           clip: AudioClip, target: int) -> np.ndarray:
    """
    Exact input gradient of ensemble_loss

    Args:
        level: EnsembleLevel
        alpha: Non-negative weights summing to 1
        models: Surrogates
        clip: Input clip
        target: Target command

    Returns:
        np.ndarray: d(ensemble loss)/d(samples)
    """
    alpha = _check_alpha(alpha, len(models))
    level = EnsembleLevel(level)
    logits = [m.forward(clip) for m in models]
    n_classes = logits[0].shape[0]
    onehot = np.zeros(n_classes)
    onehot[target] = 1.0

    if level == EnsembleLevel.LOSS:
        upstream = [a * (softmax(z) - onehot) for a, z in zip(alpha, logits)]
    elif level == EnsembleLevel.LOGITS:
        shared = softmax(sum(a * z for a, z in zip(alpha, logits))) - onehot
        upstream = [a * shared for a in alpha]
    else:
        probs = [softmax(z) for z in logits]
        fused = sum(a * p[target] for a, p in zip(alpha, probs))
        upstream = [-a * p[target] / fused * (onehot - p) for a, p in zip(alpha, probs)]

    total = np.zeros(len(clip))
    for model, grad_logits in zip(models, upstream):
        if np.any(grad_logits):
            total += model.backward(clip, grad_logits)
    return total


# ---------------------------------------------------------------------------
# Attack loop
# ---------------------------------------------------------------------------

class AttackEngine:
    """Runs the iterative ensemble attack for one set of surrogates"""

    def __init__(self, models: Sequence, cfg: AttackConfig, targets: Sequence = ()):
        """
        Bind surrogates, configuration and black-box probes

        Args:
            models: Trained surrogates
            cfg: Attack configuration
            targets: Black-box targets probed every cfg.query_every iterations
        """
        if not models:
            raise ArgumentError("an attack needs at least one surrogate")
        require_trained(models)
        cfg.validate(len(models))
        self.models = list(models)
        self.cfg = cfg
        self.targets = list(targets)
        self.strategy = cfg.strategy

        if self.strategy.single_model:
            self.active = [self.models[cfg.source_model]]
        else:
            self.active = self.models

        dropout = 0.0 if self.strategy == Strategy.SINGLE else cfg.dropout
        self.smoothing = SmoothingConfig.from_attack_config(cfg, dropout=dropout)

    def _streams(self, target: int, carrier_index: Optional[int]):
        seq = np.random.SeedSequence(self.cfg.seed, spawn_key=(target, carrier_index or 0))
        perturb, select, silence = seq.spawn(3)
        return (np.random.default_rng(perturb), np.random.default_rng(select),
                np.random.default_rng(silence))

    def _gradient(self, x_t: AudioClip, target: int, momenta: List[np.ndarray],
                  perturb_rng: np.random.Generator, select_rng: np.random.Generator) -> EnsembleChoice:
        cfg = self.cfg
        if self.strategy == Strategy.SCALE_INVARIANT:
            raw = [scale_invariant_gradient(self.active[0], x_t, target, cfg.m_scales)]
        elif self.strategy == Strategy.LOSS_ENSEMBLE:
            alpha = cfg.weights(len(self.models))
            total = np.zeros(len(x_t))
            for mask, noise in draw_perturbations(len(x_t), self.smoothing, perturb_rng):
                perturbed = x_t.with_samples(x_t.samples * mask + noise)
                total += mask * ensemble_loss_gradient(cfg.ensemble_level, alpha, self.models,
                                                       perturbed, target)
            raw = [total]
        else:
            # every model sees the same M perturbed copies
            perturbations = draw_perturbations(len(x_t), self.smoothing, perturb_rng)
            raw = [smooth_gradient(m, x_t, target, self.smoothing, perturbations=perturbations)
                   for m in self.active]

        for k, g in enumerate(raw):
            momenta[k] = momentum_accumulate(momenta[k], normalize_gradient(g), cfg.momentum)

        if self.strategy in (Strategy.RGE, Strategy.DGWE):
            return combine_gradients(self.strategy, momenta, cfg.sigma, select_rng)
        return EnsembleChoice(momenta[0])

    def _losses(self, x_t: AudioClip, target: int, iteration: int) -> List[float]:
        if self.strategy == Strategy.LOSS_ENSEMBLE:
            models = self.models
        else:
            models = self.active
        losses = [m.loss(x_t, target) for m in models]
        if not all(np.isfinite(losses)):
            raise NumericError(f"non-finite loss {losses}", iteration=iteration)
        return losses

    def run(self, carrier: AudioClip, target: int, carrier_index: Optional[int] = None) -> AttackResult:
        """
        Craft an adversarial example that the surrogates classify as target

        Args:
            carrier: Benign clip the perturbation is embedded in
            target: Target command id
            carrier_index: Position of the carrier in its fixture, recorded in the result

        Returns:
            AttackResult: Final clip, per-iteration log and probe transcript
        """
        cfg = self.cfg
        n_classes = self.models[0].n_classes
        if not 0 <= target < n_classes:
            raise ArgumentError(f"target {target} outside [0, {n_classes - 1}]")

        perturb_rng, select_rng, silence_rng = self._streams(target, carrier_index)

        positions: List[int] = []
        if cfg.silence_frames > 0:
            positions = random_silence_positions(carrier, cfg.silence_frames, silence_rng,
                                                 cfg.silence_frame_len)
            carrier = insert_silence_frames(carrier, positions, cfg.silence_frame_len)

        feature_config = self.models[0].feature_config
        if get_front_end(feature_config).n_frames(len(carrier)) < 1:
            raise ArgumentError(f"carrier of {len(carrier)} samples is shorter than one feature frame")

        x_orig = carrier
        x_adv = carrier.with_samples(carrier.samples.copy())
        n = len(carrier)
        adam = AdamState.zeros(n, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        momenta = [np.zeros(n) for _ in self.active] if self.strategy != Strategy.LOSS_ENSEMBLE else [np.zeros(n)]

        records: List[IterationRecord] = []
        probes: List[ProbeRecord] = []
        stopped_early = False

        for t in range(cfg.iterations):
            losses = self._losses(x_adv, target, t)
            choice = self._gradient(x_adv, target, momenta, perturb_rng, select_rng)
            if not np.all(np.isfinite(choice.gradient)):
                raise NumericError("non-finite ensemble gradient", iteration=t)

            _, update = adam_step(adam, choice.gradient)
            x_adv = clip_perturbation(x_adv.with_samples(x_adv.samples - update), x_orig, cfg.epsilon)
            linf = float(np.max(np.abs(x_adv.samples - x_orig.samples)))

            records.append(IterationRecord(
                iteration=t,
                losses=losses,
                grad_norms=[float(np.linalg.norm(g)) for g in momenta],
                linf=linf,
                chosen=choice.chosen,
                weights=None if choice.weights is None else choice.weights.tolist(),
                uniform_fallback=choice.uniform_fallback,
            ))
            logger.debug(f"iter {t}: losses {np.round(losses, 4).tolist()} linf {linf:.4f}"
                         f" chosen {choice.chosen}")

            if self.targets and (t + 1) % cfg.query_every == 0:
                labels = [(tgt.name, tgt.query(x_adv)) for tgt in self.targets]
                probes.extend(ProbeRecord(t + 1, name, label) for name, label in labels)
                if cfg.early_stop and all(label == target for _, label in labels):
                    stopped_early = True
                    logger.info(f"All black-box targets return {target} at iteration {t + 1}; stopping")
                    break

        diff = x_adv.samples - x_orig.samples
        result = AttackResult(
            adversarial=x_adv,
            target=target,
            strategy=self.strategy.value,
            config=cfg.to_dict(),
            config_hash=cfg.config_hash(),
            model_names=[m.name for m in self.models],
            iterations=records,
            whitebox_success={m.name: m.predict(x_adv) == target for m in self.models},
            probes=probes,
            queries=len(probes),
            final_linf=float(np.max(np.abs(diff))) if n else 0.0,
            final_l2=float(np.linalg.norm(diff)),
            carrier_index=carrier_index,
            silence_positions=positions,
            stopped_early=stopped_early,
            original=x_orig,
        )
        fallbacks = sum(rec.uniform_fallback for rec in records)
        if fallbacks:
            logger.warning(f"DGWE fell back to uniform weights on {fallbacks}/{len(records)} iterations")
        fooled = sum(result.whitebox_success.values())
        logger.info(f"{self.strategy.value} attack -> {target} (carrier {carrier_index}): "
                    f"{fooled}/{len(self.models)} surrogates fooled, linf {result.final_linf:.4f}")
        return result


def create_attack_engine(models: Sequence, cfg: Optional[AttackConfig] = None,
                         targets: Sequence = ()) -> AttackEngine:
    """Create an attack engine; the configuration is read from the environment when omitted"""
    return AttackEngine(models, cfg or get_attack_config(), targets)


def run_attack(models: Sequence, carrier: AudioClip, target: int, cfg: AttackConfig,
               blackbox_targets: Sequence = (), carrier_index: Optional[int] = None) -> AttackResult:
    """
    Run one attack with the strategy named in cfg

    Args:
        models: Trained surrogates
        carrier: Benign clip
        target: Target command id
        cfg: Attack configuration
        blackbox_targets: Targets probed every cfg.query_every iterations
        carrier_index: Recorded in the result

    Returns:
        AttackResult: The finished attack
    """
    return AttackEngine(models, cfg, blackbox_targets).run(carrier, target, carrier_index)


def self_ensemble_attack(model, carrier: AudioClip, target: int, cfg: AttackConfig,
                         blackbox_targets: Sequence = ()) -> AttackResult:
    """Single-model attack with a fresh dropout mask on the iterate every round"""
    cfg = cfg.replace(strategy=Strategy.SELF_ENSEMBLE, source_model=0, alpha=None)
    return run_attack([model], carrier, target, cfg, blackbox_targets)


def run_attack_batch(models: Sequence, carriers: Sequence[AudioClip], commands: Sequence[int],
                     cfg: AttackConfig, targets: Sequence = (), jobs: int = 1) -> List[AttackResult]:
    """
    Attack every (command, carrier) pair

    Args:
        models: Trained surrogates
        carriers: Carrier clips
        commands: Target command ids
        cfg: Attack configuration
        targets: Black-box targets to probe
        jobs: Worker threads

    Returns:
        List[AttackResult]: Command-major order, independent of jobs
    """
    engine = AttackEngine(models, cfg, targets)
    pairs = [(command, j) for command in commands for j in range(len(carriers))]
    logger.info(f"Running {len(pairs)} {cfg.strategy.value} attacks with {jobs} worker(s)")

    def attack(pair):
        command, j = pair
        return engine.run(carriers[j], command, carrier_index=j)

    if jobs <= 1:
        return [attack(pair) for pair in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(attack, pairs))


def save_attack_result(result: AttackResult, out_dir: str, stem: str) -> Tuple[Path, Path]:
    """
    Write the adversarial WAV, its carrier and the JSON log side by side

    Args:
        result: Finished attack
        out_dir: Destination directory (created if needed)
        stem: File name without extension

    Returns:
        Tuple[Path, Path]: Paths of the WAV and the JSON
    """
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    wav_path = directory / f"{stem}.wav"
    json_path = directory / f"{stem}.json"
    try:
        save_wav(result.adversarial, str(wav_path))
        if result.original is not None:
            save_wav(result.original, str(directory / f"{stem}_carrier.wav"))
        with open(json_path, "w") as f:
            json.dump(result.to_dict(), f, indent=2, sort_keys=True)
    except Exception as e:
        logger.error(f"Error saving attack result {stem}: {e}")
        raise
    return wav_path, json_path


def load_attack_result(json_path: str) -> AttackResult:
    """Read a result written by save_attack_result; the WAV must sit next to the JSON"""
    json_path = Path(json_path)
    with open(json_path, "r") as f:
        data = json.load(f)
    adversarial = load_wav(str(json_path.with_suffix(".wav")))
    result = AttackResult.from_dict(data, adversarial)
    carrier_path = json_path.with_name(f"{json_path.stem}_carrier.wav")
    if carrier_path.exists():
        result.original = load_wav(str(carrier_path))
    return result
