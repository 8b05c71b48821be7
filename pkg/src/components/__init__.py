"""
Components package for the ensemble attack toolkit
"""

from .config import (
    TOOL_VERSION as __version__,
    AttackConfig,
    EnsembleLevel,
    FeatureConfig,
    Strategy,
    configure_logging,
    get_attack_config,
)
from .errors import (
    EadvError,
    ArgumentError,
    AudioFormatError,
    ConfigError,
    NumericError,
    PreconditionError,
    TrainingDivergedError,
)
from .audio_core import AudioClip, load_wav, save_wav, log_mel_features, feature_backprop
from .dataset import CommandDataset, generate_dataset, generate_carriers
from .surrogate_models import ModelFactory, SurrogateModel, train_surrogates, load_checkpoint, save_checkpoint
from .blackbox import BlackBoxTarget, create_targets
from .ensemble_attack import AttackEngine, AttackResult, create_attack_engine, run_attack, run_attack_batch
from .eval_harness import DefenseSpec, TransferReport, evaluate_transfer, evaluate_defense, write_report
from .artifact_store import ArtifactStore, RunManifest, get_artifact_store

__all__ = [
    '__version__',
    'AttackConfig', 'EnsembleLevel', 'FeatureConfig', 'Strategy', 'configure_logging', 'get_attack_config',
    'EadvError', 'ArgumentError', 'AudioFormatError', 'ConfigError', 'NumericError',
    'PreconditionError', 'TrainingDivergedError',
    'AudioClip', 'load_wav', 'save_wav', 'log_mel_features', 'feature_backprop',
    'CommandDataset', 'generate_dataset', 'generate_carriers',
    'ModelFactory', 'SurrogateModel', 'train_surrogates', 'load_checkpoint', 'save_checkpoint',
    'BlackBoxTarget', 'create_targets',
    'AttackEngine', 'AttackResult', 'create_attack_engine', 'run_attack', 'run_attack_batch',
    'DefenseSpec', 'TransferReport', 'evaluate_transfer', 'evaluate_defense', 'write_report',
    'ArtifactStore', 'RunManifest', 'get_artifact_store',
]
