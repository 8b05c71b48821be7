"""
Evaluation Harness Component for the ensemble attack toolkit
Transfer-rate measurement, strategy comparison, noise-level and dropout sweeps,
defense evaluation, and CSV/JSON report emission
"""

import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .audio_core import AudioClip, NoiseSpec, add_uniform_noise, clip_samples, resample
from .blackbox import BlackBoxTarget, query_targets
from .config import AttackConfig, Strategy, DEFAULT_FEATURES
from .ensemble_attack import AttackResult, run_attack_batch
from .errors import ArgumentError, PreconditionError
from .surrogate_models import gradient_similarity

# Configure logging
logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "strategy", "parameter", "target", "successes", "total", "tr", "ratio",
    "any_probe_successes", "any_probe_tr", "any_probe_ratio",
    "carrier_hits", "carrier_excluded_successes", "carrier_excluded_tr", "config_hash",
]

TABLE_NOISE_LEVELS = [0, 4000, 8000, 12500, 17500, 20000, 25000]
DEFAULT_P_GRID = [0.0, 0.25, 0.5, 0.75, 1.0]
SILENCE_COUNTS = [0, 10]


def format_ratio(successes: int, total: int) -> str:
    """Render a count as 'A/B'"""
    return f"{int(successes)}/{int(total)}"


def transfer_rate(success_matrix) -> float:
    """
    Fraction of adversarial examples that transferred

    Args:
        success_matrix: Boolean array of any shape, one entry per AE

    Returns:
        float: successes / total entries
    """
    matrix = np.asarray(success_matrix, dtype=bool)
    if matrix.size == 0:
        raise ArgumentError("transfer rate of an empty success matrix")
    return int(matrix.sum()) / matrix.size


@dataclass
class TransferReport:
    """
    Per-target success matrices indexed (command, sample)

    success holds query(target, AE) == command. carrier_hits marks the entries whose clean
    carrier already returns the command; it is None when the results carry no carriers.
    """

    strategy: str
    config_hash: str
    commands: List[int]
    target_names: List[str]
    success: Dict[str, np.ndarray]
    any_probe: Dict[str, np.ndarray]
    attack_queries: np.ndarray
    carrier_hits: Optional[Dict[str, np.ndarray]] = None

    @property
    def n_samples(self) -> int:
        return int(self.attack_queries.shape[1])

    @property
    def total(self) -> int:
        return int(self.attack_queries.size)

    def successes(self, target_name: str, any_probe: bool = False) -> int:
        matrix = self.any_probe[target_name] if any_probe else self.success[target_name]
        return int(matrix.sum())

    def tr(self, target_name: str, any_probe: bool = False) -> float:
        matrix = self.any_probe[target_name] if any_probe else self.success[target_name]
        return transfer_rate(matrix)

    def excluded_success(self, target_name: str) -> Optional[np.ndarray]:
        """Successes whose clean carrier did not already return the command"""
        if self.carrier_hits is None:
            return None
        return self.success[target_name] & ~self.carrier_hits[target_name]

    def aggregate_tr(self, any_probe: bool = False) -> float:
        source = self.any_probe if any_probe else self.success
        return transfer_rate(np.stack([source[name] for name in self.target_names]))

    def rows(self, parameter: str = "") -> List[Dict[str, Any]]:
        rows = []
        for name in self.target_names:
            hits = self.successes(name)
            probe_hits = self.successes(name, any_probe=True)
            excluded = self.excluded_success(name)
            rows.append({
                "strategy": self.strategy,
                "parameter": parameter,
                "target": name,
                "successes": hits,
                "total": self.total,
                "tr": hits / self.total,
                "ratio": format_ratio(hits, self.total),
                "any_probe_successes": probe_hits,
                "any_probe_tr": probe_hits / self.total,
                "any_probe_ratio": format_ratio(probe_hits, self.total),
                "carrier_hits": None if excluded is None else int(self.carrier_hits[name].sum()),
                "carrier_excluded_successes": None if excluded is None else int(excluded.sum()),
                "carrier_excluded_tr": None if excluded is None else transfer_rate(excluded),
                "config_hash": self.config_hash,
            })
        return rows

    def to_frame(self, parameter: str = "") -> pd.DataFrame:
        return pd.DataFrame(self.rows(parameter), columns=REPORT_COLUMNS)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "strategy": self.strategy,
            "config_hash": self.config_hash,
            "commands": self.commands,
            "n_samples": self.n_samples,
            "success": {k: v.astype(int).tolist() for k, v in self.success.items()},
            "any_probe": {k: v.astype(int).tolist() for k, v in self.any_probe.items()},
            "tr": {k: self.tr(k) for k in self.target_names},
            "any_probe_tr": {k: self.tr(k, any_probe=True) for k in self.target_names},
            "aggregate_tr": self.aggregate_tr(),
            "attack_queries": self.attack_queries.astype(int).tolist(),
        }
        if self.carrier_hits is not None:
            data["carrier_hits"] = {k: v.astype(int).tolist() for k, v in self.carrier_hits.items()}
        return data


def _grid(results: Sequence[AttackResult]) -> Tuple[List[int], List[List[AttackResult]]]:
    commands = sorted({r.target for r in results})
    grid = []
    for command in commands:
        row = [r for r in results if r.target == command]
        row.sort(key=lambda r: -1 if r.carrier_index is None else r.carrier_index)
        grid.append(row)
    widths = {len(row) for row in grid}
    if len(widths) != 1:
        raise ArgumentError(f"commands have unequal sample counts: {sorted(widths)}")
    return commands, grid


def _check_targets(targets: Sequence) -> None:
    if not targets:
        raise ArgumentError("evaluation needs at least one target")
    for target in targets:
        if not isinstance(target, BlackBoxTarget):
            raise PreconditionError(f"{target!r} is not a black-box target")


def evaluate_transfer(attack_results: Sequence[AttackResult],
                      targets: Sequence[BlackBoxTarget]) -> TransferReport:
    """
    Query every target with every adversarial example

    An AE succeeds against a target when the target returns its command. When every
    result carries its clean carrier, the carrier is queried too and the report adds
    the count of successes the carrier alone would already have produced.

    Args:
        attack_results: Results of one strategy; each knows its intended command
        targets: Black-box targets

    Returns:
        TransferReport: Success matrices (final iterate and any probe) per target
    """
    if not attack_results:
        raise ArgumentError("no attack results to evaluate")
    _check_targets(targets)
    commands, grid = _grid(attack_results)
    n_samples = len(grid[0])
    shape = (len(commands), n_samples)
    with_carriers = all(r.original is not None for r in attack_results)

    success = {t.name: np.zeros(shape, dtype=bool) for t in targets}
    any_probe = {t.name: np.zeros(shape, dtype=bool) for t in targets}
    carrier_hits = {t.name: np.zeros(shape, dtype=bool) for t in targets} if with_carriers else None
    queries = np.zeros(shape, dtype=int)

    for i, row in enumerate(grid):
        for j, result in enumerate(row):
            queries[i, j] = result.queries
            labels = query_targets(targets, result.adversarial)
            for name, label in labels.items():
                hit = label == result.target
                success[name][i, j] = hit
                any_probe[name][i, j] = hit or result.probe_success(name)
            if with_carriers:
                for name, label in query_targets(targets, result.original).items():
                    carrier_hits[name][i, j] = label == result.target

    if not with_carriers:
        logger.debug("Results without carriers; carrier-hit columns left empty")

    strategies = sorted({r.strategy for r in attack_results})
    hashes = sorted({r.config_hash for r in attack_results})
    report = TransferReport(
        strategy=",".join(strategies),
        config_hash=",".join(hashes),
        commands=commands,
        target_names=[t.name for t in targets],
        success=success,
        any_probe=any_probe,
        attack_queries=queries,
        carrier_hits=carrier_hits,
    )
    summary = ", ".join(f"{n} {format_ratio(report.successes(n), report.total)}" for n in report.target_names)
    logger.info(f"Transfer of {report.strategy}: {summary}")
    return report


def baseline_results(carriers: Sequence[AudioClip], commands: Sequence[int],
                     config_hash: str = "clean") -> List[AttackResult]:
    """Wrap unmodified carriers as zero-iteration results for base-rate checks"""
    return [
        AttackResult(
            adversarial=carrier, target=command, strategy="clean", config={},
            config_hash=config_hash, model_names=[], carrier_index=j, original=carrier,
        )
        for command in commands for j, carrier in enumerate(carriers)
    ]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def strategy_label(cfg: AttackConfig) -> str:
    if cfg.strategy.single_model:
        return f"{cfg.strategy.value}[{cfg.source_model}]"
    return cfg.strategy.value


def _frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def strategy_comparison(models: Sequence, carriers: Sequence[AudioClip], commands: Sequence[int],
                        cfg: AttackConfig, targets: Sequence[BlackBoxTarget],
                        strategies: Sequence[Strategy] = (Strategy.SINGLE, Strategy.RGE, Strategy.DGWE),
                        jobs: int = 1) -> Tuple[pd.DataFrame, Dict[str, List[AttackResult]]]:
    """
    Attack the fixture with every strategy and compare transfer

    Single-model strategies run once per surrogate, labelled strategy[k].

    Args:
        models: Trained surrogates
        carriers: Carrier clips
        commands: Target commands
        cfg: Base configuration; strategy and source_model are overridden
        targets: Black-box targets
        strategies: Strategies to compare
        jobs: Worker threads per batch

    Returns:
        Tuple[pd.DataFrame, Dict[str, List[AttackResult]]]: One row per (strategy, target) and the results
    """
    rows = []
    all_results = {}
    for strategy in strategies:
        strategy = Strategy(strategy)
        sources = range(len(models)) if strategy.single_model else [cfg.source_model]
        for k in sources:
            run_cfg = cfg.replace(strategy=strategy, source_model=k)
            label = strategy_label(run_cfg)
            results = run_attack_batch(models, carriers, commands, run_cfg, targets, jobs)
            report = evaluate_transfer(results, targets)
            for row in report.rows():
                row["strategy"] = label
                rows.append(row)
            all_results[label] = results
    return _frame(rows), all_results


def best_single_tr(frame: pd.DataFrame, target_name: str, column: str = "tr") -> float:
    """Highest TR any single-surrogate strategy reached against a target"""
    singles = frame[frame["strategy"].str.startswith(f"{Strategy.SINGLE.value}[") & (frame["target"] == target_name)]
    if singles.empty:
        raise ArgumentError(f"no single-surrogate rows for {target_name}")
    return float(singles[column].max())


def noise_level_sweep(models: Sequence, carriers: Sequence[AudioClip], commands: Sequence[int],
                      levels: Sequence[float], cfg: AttackConfig, targets: Sequence[BlackBoxTarget],
                      include_reference_rows: bool = False, jobs: int = 1) -> pd.DataFrame:
    """
    One attack batch per noise level, all at the same seed

    Args:
        models: Trained surrogates
        carriers: Carrier clips
        commands: Target commands
        levels: Noise amplitudes in 16-bit units
        cfg: Base configuration; noise is overridden per level
        targets: Black-box targets
        include_reference_rows: Append a dropout (p=0.5) and a scale-invariant (m=4) row
        jobs: Worker threads per batch

    Returns:
        pd.DataFrame: One row per (level, target), parameter rendered as '±N'
    """
    runs = []
    for level in levels:
        if level < 0:
            raise ArgumentError(f"noise level must be >= 0, got {level}")
        runs.append((f"±{level:g}", cfg.replace(noise=NoiseSpec.from_pcm16(level).amplitude)))
    if include_reference_rows:
        runs.append(("dropout p=0.5", cfg.replace(strategy=Strategy.SELF_ENSEMBLE, dropout=0.5)))
        runs.append(("scale-invariant m=4", cfg.replace(strategy=Strategy.SCALE_INVARIANT, m_scales=4)))

    rows = []
    for parameter, run_cfg in runs:
        results = run_attack_batch(models, carriers, commands, run_cfg, targets, jobs)
        for row in evaluate_transfer(results, targets).rows(parameter):
            row["strategy"] = strategy_label(run_cfg)
            rows.append(row)
        logger.info(f"Noise sweep {parameter} done")
    return _frame(rows)


def p_sweep(models: Sequence, carriers: Sequence[AudioClip], commands: Sequence[int],
            p_values: Sequence[float], cfg: AttackConfig, targets: Sequence[BlackBoxTarget],
            strategies: Sequence[Strategy] = (Strategy.RGE, Strategy.DGWE), jobs: int = 1) -> pd.DataFrame:
    """
    RGE and DGWE transfer rate per dropout probability

    Args:
        models: Trained surrogates
        carriers: Carrier clips
        commands: Target commands
        p_values: Dropout probabilities in [0, 1]
        cfg: Base configuration
        targets: Black-box targets
        strategies: Ensemble strategies to sweep
        jobs: Worker threads per batch

    Returns:
        pd.DataFrame: One row per (strategy, p, target)
    """
    bad = [p for p in p_values if not 0.0 <= p <= 1.0]
    if bad:
        raise ArgumentError(f"dropout values outside [0, 1]: {bad}")

    rows = []
    for p in p_values:
        for strategy in strategies:
            run_cfg = cfg.replace(strategy=Strategy(strategy), dropout=float(p))
            results = run_attack_batch(models, carriers, commands, run_cfg, targets, jobs)
            rows.extend(evaluate_transfer(results, targets).rows(f"p={p:g}"))
        logger.info(f"p sweep p={p:g} done")
    return _frame(rows)


def silence_comparison(models: Sequence, carriers: Sequence[AudioClip], commands: Sequence[int],
                       cfg: AttackConfig, targets: Sequence[BlackBoxTarget],
                       counts: Sequence[int] = tuple(SILENCE_COUNTS),
                       strategies: Sequence[Strategy] = (Strategy.RGE, Strategy.DGWE),
                       jobs: int = 1) -> pd.DataFrame:
    """
    Transfer with and without silence frames inserted into the carrier before attacking

    Args:
        models: Trained surrogates
        carriers: Carrier clips
        commands: Target commands
        cfg: Base configuration; silence_frames is overridden per count
        targets: Black-box targets
        counts: Number of zero frames inserted at random positions
        strategies: Ensemble strategies to compare
        jobs: Worker threads per batch

    Returns:
        pd.DataFrame: One row per (strategy, count, target), parameter rendered as 'silence=N'
    """
    bad = [c for c in counts if int(c) != c or c < 0]
    if bad:
        raise ArgumentError(f"silence frame counts must be integers >= 0: {bad}")

    rows = []
    for count in counts:
        for strategy in strategies:
            run_cfg = cfg.replace(strategy=Strategy(strategy), silence_frames=int(count))
            results = run_attack_batch(models, carriers, commands, run_cfg, targets, jobs)
            rows.extend(evaluate_transfer(results, targets).rows(f"silence={int(count)}"))
        logger.info(f"Silence comparison with {int(count)} frames done")
    return _frame(rows)


def gradient_diversity(models: Sequence, carriers: Sequence[AudioClip],
                       commands: Sequence[int]) -> Dict[str, Any]:
    """Mean pairwise cosine similarity of surrogate gradients over the fixture"""
    matrices = [gradient_similarity(models, carrier, command)
                for command in commands for carrier in carriers]
    mean = np.mean(matrices, axis=0)
    off_diagonal = mean[~np.eye(len(models), dtype=bool)]
    return {
        "models": [m.name for m in models],
        "mean_cosine": mean.tolist(),
        "mean_off_diagonal": float(off_diagonal.mean()) if off_diagonal.size else 1.0,
    }


# ---------------------------------------------------------------------------
# Defenses
# ---------------------------------------------------------------------------

class DefenseKind(str, Enum):
    DOWNSAMPLE = "downsample"
    ADD_NOISE = "add_noise"


@dataclass(frozen=True)
class DefenseSpec:
    """Input transformation applied before the target model sees a clip"""

    kind: DefenseKind
    value: float

    def __post_init__(self):
        object.__setattr__(self, "kind", DefenseKind(self.kind))
        if self.kind == DefenseKind.DOWNSAMPLE and self.value <= 0:
            raise ArgumentError(f"downsample rate must be > 0, got {self.value}")
        if self.kind == DefenseKind.ADD_NOISE and self.value < 0:
            raise ArgumentError(f"noise amplitude must be >= 0, got {self.value}")

    def is_identity(self, clip: AudioClip) -> bool:
        """True when the defense leaves clip unchanged"""
        if self.kind == DefenseKind.DOWNSAMPLE:
            return self.value == clip.sample_rate
        return self.value == 0

    @property
    def label(self) -> str:
        if self.kind == DefenseKind.DOWNSAMPLE:
            return f"downsample {self.value:g}"
        return f"noise {self.value:g}"


TABLE_DEFENSES = [
    DefenseSpec(DefenseKind.DOWNSAMPLE, 5200),
    DefenseSpec(DefenseKind.DOWNSAMPLE, 5600),
    DefenseSpec(DefenseKind.DOWNSAMPLE, 6000),
    DefenseSpec(DefenseKind.ADD_NOISE, 500),
    DefenseSpec(DefenseKind.ADD_NOISE, 1000),
    DefenseSpec(DefenseKind.ADD_NOISE, 2000),
]


def apply_defense(clip: AudioClip, spec: DefenseSpec, rng: Optional[np.random.Generator] = None) -> AudioClip:
    """
    Transform a clip the way a defended service would

    Args:
        clip: Input clip
        spec: Defense to apply
        rng: Noise generator for ADD_NOISE; seeded with 0 when omitted

    Returns:
        AudioClip: Defended clip, same length and rate as the input
    """
    if spec.kind == DefenseKind.DOWNSAMPLE:
        if spec.value > clip.sample_rate:
            raise ArgumentError(f"downsample rate {spec.value:g} above the clip rate {clip.sample_rate}")
        if spec.is_identity(clip):
            return clip.with_samples(clip.samples.copy())
        low = resample(clip, int(spec.value), antialias=True)
        return resample(low, clip.sample_rate, num_samples=len(clip), antialias=True)

    if spec.is_identity(clip):
        return clip.with_samples(clip.samples.copy())
    rng = rng if rng is not None else np.random.default_rng(0)
    noisy = add_uniform_noise(clip, NoiseSpec.from_pcm16(spec.value).amplitude, rng)
    return clip_samples(noisy)


def evaluate_defense(attack_results: Sequence[AttackResult], specs: Sequence[DefenseSpec],
                     targets: Sequence[BlackBoxTarget], seed: int = 0,
                     include_undefended: bool = False) -> pd.DataFrame:
    """
    Transfer rate after each defense, per target

    Defenses transform both the AE and its carrier; probe transcripts are dropped because
    they were recorded without the defense. A defense that is the identity on a clip
    leaves its result untouched, probes included.

    Args:
        attack_results: Results of one strategy
        specs: Defenses
        targets: Black-box targets
        seed: Seed of the noise defenses
        include_undefended: Prepend the undefended rows

    Returns:
        pd.DataFrame: One row per (defense, target)
    """
    rows = []
    if include_undefended:
        rows.extend(evaluate_transfer(attack_results, targets).rows("none"))

    for s, spec in enumerate(specs):
        defended = []
        for r, result in enumerate(attack_results):
            if spec.is_identity(result.adversarial):
                defended.append(result)
                continue
            rng = np.random.default_rng([seed, s, r])
            original = None if result.original is None else apply_defense(result.original, spec, rng)
            defended.append(replace(result, adversarial=apply_defense(result.adversarial, spec, rng),
                                    original=original, probes=[]))
        rows.extend(evaluate_transfer(defended, targets).rows(spec.label))
        logger.info(f"Defense {spec.label} evaluated")
    return _frame(rows)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_report(table: pd.DataFrame, meta: Dict[str, Any], out_dir: str, stem: str) -> Tuple[Path, Path]:
    """
    Write a result grid as CSV and as JSON with its metadata

    Args:
        table: Grid with REPORT_COLUMNS
        meta: Config echo, seeds, feature constants
        out_dir: Destination directory
        stem: File name without extension

    Returns:
        Tuple[Path, Path]: CSV and JSON paths
    """
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.json"

    meta = dict(meta)
    meta.setdefault("features", DEFAULT_FEATURES.to_dict())
    try:
        table.to_csv(csv_path, index=False)
        payload = {"meta": meta, "rows": json.loads(table.to_json(orient="records"))}
        with open(json_path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
    except Exception as e:
        logger.error(f"Error writing report {stem}: {e}")
        raise
    logger.info(f"Wrote {csv_path} and {json_path}")
    return csv_path, json_path
