"""
Configuration Component for the ensemble attack toolkit
Handles attack hyperparameters, feature front-end constants, and logging setup.
Values are layered: defaults, then EADV_* environment variables, then a config file, then explicit overrides.
"""

import os
import json
import hashlib
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, asdict, replace as dc_replace
from enum import Enum
from pathlib import Path
from typing import Dict, Any, List, Optional

from .errors import ConfigError

# Configure logging
logger = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"

LOG_LEVELS = {
    "quiet": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class Strategy(str, Enum):
    SINGLE = "single"
    SELF_ENSEMBLE = "self_ensemble"
    SCALE_INVARIANT = "scale_invariant"
    RGE = "rge"
    DGWE = "dgwe"
    LOSS_ENSEMBLE = "loss_ensemble"

    @property
    def single_model(self) -> bool:
        return self in (Strategy.SINGLE, Strategy.SELF_ENSEMBLE, Strategy.SCALE_INVARIANT)


class EnsembleLevel(str, Enum):
    LOSS = "loss"
    LOGITS = "logits"
    PREDICTIONS = "predictions"


@dataclass(frozen=True)
class FeatureConfig:
    """Fixed constants of the log-mel front-end, recorded in every report"""

    sample_rate: int = 16000
    frame_length: int = 400
    hop: int = 160
    mel_bins: int = 26
    fmin: float = 0.0
    fmax: float = 8000.0
    e_floor: float = 1e-10

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


DEFAULT_FEATURES = FeatureConfig()


@dataclass
class AttackConfig:
    """All attack hyperparameters"""

    epsilon: float = 0.12
    iterations: int = 500
    rounds: int = 4
    dropout: float = 0.5
    noise: float = 0.01
    momentum: float = 0.9
    sigma: float = 1.0
    strategy: Strategy = Strategy.RGE
    ensemble_level: EnsembleLevel = EnsembleLevel.LOSS
    alpha: Optional[List[float]] = None
    lr: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    query_every: int = 10
    m_scales: int = 4
    source_model: int = 0
    mask_per_round: bool = True
    early_stop: bool = False
    silence_frames: int = 0
    silence_frame_len: int = 128

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.ensemble_level = EnsembleLevel(self.ensemble_level)
        if self.alpha is not None:
            self.alpha = [float(a) for a in self.alpha]

    def validate(self, n_models: Optional[int] = None) -> "AttackConfig":
        """
        Check every invariant of the configuration

        Args:
            n_models: Number of surrogates the config will be used with, if known

        Returns:
            AttackConfig: self, for chaining
        """
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.rounds < 1:
            raise ConfigError(f"rounds (M) must be >= 1, got {self.rounds}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError(f"dropout p must be in [0, 1], got {self.dropout}")
        if self.noise < 0:
            raise ConfigError(f"noise amplitude A must be >= 0, got {self.noise}")
        if self.momentum < 0:
            raise ConfigError(f"momentum must be >= 0, got {self.momentum}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.query_every < 1:
            raise ConfigError(f"query_every must be >= 1, got {self.query_every}")
        if self.m_scales < 1:
            raise ConfigError(f"m_scales must be >= 1, got {self.m_scales}")
        if self.silence_frames < 0 or self.silence_frame_len < 1:
            raise ConfigError("silence_frames must be >= 0 and silence_frame_len >= 1")
        if self.alpha is not None:
            if any(a < 0 for a in self.alpha) or abs(sum(self.alpha) - 1.0) > 1e-9:
                raise ConfigError(f"alpha must be non-negative and sum to 1, got {self.alpha}")
            if n_models is not None and len(self.alpha) != n_models:
                raise ConfigError(f"alpha has {len(self.alpha)} entries for {n_models} models")
        if n_models is not None and self.strategy.single_model and not 0 <= self.source_model < n_models:
            raise ConfigError(f"source_model {self.source_model} out of range for {n_models} models")
        return self

    def weights(self, n_models: int) -> List[float]:
        """Ensemble weights, uniform when none were configured"""
        if self.alpha is None:
            return [1.0 / n_models] * n_models
        return list(self.alpha)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["strategy"] = self.strategy.value
        data["ensemble_level"] = self.ensemble_level.value
        return data

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.md5(canonical.encode()).hexdigest()[:12]

    def replace(self, **changes) -> "AttackConfig":
        return dc_replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except ValueError as e:
            raise ConfigError(str(e)) from e


# environment variable -> (field, parser)
ENV_FIELDS = {
    "EADV_EPSILON": ("epsilon", float),
    "EADV_ITERATIONS": ("iterations", int),
    "EADV_ROUNDS": ("rounds", int),
    "EADV_DROPOUT": ("dropout", float),
    "EADV_NOISE": ("noise", float),
    "EADV_MOMENTUM": ("momentum", float),
    "EADV_SIGMA": ("sigma", float),
    "EADV_STRATEGY": ("strategy", str),
    "EADV_LR": ("lr", float),
    "EADV_SEED": ("seed", int),
    "EADV_QUERY_EVERY": ("query_every", int),
}


def _env_overrides() -> Dict[str, Any]:
    overrides = {}
    for var, (name, parse) in ENV_FIELDS.items():
        raw = os.getenv(var)
        if raw is None or raw == "":
            continue
        try:
            overrides[name] = parse(raw)
        except ValueError as e:
            raise ConfigError(f"{var}={raw!r} is not a valid {parse.__name__}") from e
    return overrides


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Read a JSON or TOML config file into a plain dict

    Args:
        path: Path to a .json or .toml file

    Returns:
        Dict[str, Any]: Config values (an optional [attack] table is unwrapped)
    """
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"Config file not found: {path}")

    try:
        if file_path.suffix.lower() == ".toml":
            with open(file_path, "rb") as f:
                data = tomllib.load(f)
        else:
            with open(file_path, "r") as f:
                data = json.load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    return data.get("attack", data)


def get_attack_config(config_path: Optional[str] = None, **overrides) -> AttackConfig:
    """
    Build the attack configuration from defaults, environment, file and overrides

    Args:
        config_path: Optional JSON/TOML config file
        **overrides: Explicit values (e.g. CLI flags); None values are ignored

    Returns:
        AttackConfig: Validated configuration
    """
    values: Dict[str, Any] = {}
    values.update(_env_overrides())
    if config_path:
        values.update(load_config_file(config_path))
    values.update({k: v for k, v in overrides.items() if v is not None})

    config = AttackConfig.from_dict(values)
    config.validate()
    logger.debug(f"Resolved attack config {config.config_hash()}: {config.to_dict()}")
    return config


def configure_logging(level_name: Optional[str] = None) -> int:
    """
    Configure root logging to standard error

    Args:
        level_name: One of quiet/info/debug; defaults to EADV_LOG or info

    Returns:
        int: The logging level that was applied
    """
    level_name = (level_name or os.getenv("EADV_LOG", "info")).lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"EADV_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")

    level = LOG_LEVELS[level_name]
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    return level
