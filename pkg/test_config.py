"""
Tests for configuration layering and validation
"""

import json
import logging

import pytest

from components.config import ENV_FIELDS, AttackConfig, EnsembleLevel, Strategy, configure_logging, get_attack_config
from components.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for var in ENV_FIELDS:
        monkeypatch.delenv(var, raising=False)


def test_defaults():
    cfg = get_attack_config()
    assert cfg.epsilon == 0.12
    assert cfg.iterations == 500
    assert cfg.rounds == 4
    assert cfg.dropout == 0.5
    assert cfg.noise == 0.01
    assert cfg.momentum == 0.9
    assert cfg.sigma == 1.0
    assert cfg.strategy == Strategy.RGE


def test_environment_then_file_then_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("EADV_ITERATIONS", "50")
    monkeypatch.setenv("EADV_DROPOUT", "0.3")
    path = tmp_path / "attack.json"
    path.write_text(json.dumps({"dropout": 0.7, "strategy": "dgwe"}))

    cfg = get_attack_config(str(path), dropout=None, sigma=2.0)
    assert cfg.iterations == 50
    assert cfg.dropout == 0.7
    assert cfg.strategy == Strategy.DGWE
    assert cfg.sigma == 2.0


def test_toml_attack_table(tmp_path):
    path = tmp_path / "attack.toml"
    path.write_text('[attack]\nrounds = 8\nensemble_level = "logits"\n')
    cfg = get_attack_config(str(path))
    assert cfg.rounds == 8
    assert cfg.ensemble_level == EnsembleLevel.LOGITS


@pytest.mark.parametrize("changes", [
    {"epsilon": -0.1},
    {"rounds": 0},
    {"dropout": 1.5},
    {"sigma": 0.0},
    {"query_every": 0},
    {"alpha": [0.6, 0.6]},
])
def test_invalid_values(changes):
    with pytest.raises(ConfigError):
        get_attack_config(**changes)


def test_unknown_key(tmp_path):
    path = tmp_path / "attack.json"
    path.write_text(json.dumps({"epsilonn": 0.1}))
    with pytest.raises(ConfigError):
        get_attack_config(str(path))


def test_bad_environment_value(monkeypatch):
    monkeypatch.setenv("EADV_ROUNDS", "four")
    with pytest.raises(ConfigError):
        get_attack_config()


def test_unknown_strategy():
    with pytest.raises(ConfigError):
        get_attack_config(strategy="bagging")


def test_alpha_length_checked_against_models():
    with pytest.raises(ConfigError):
        AttackConfig(alpha=[0.5, 0.5]).validate(n_models=3)


def test_hash_tracks_values():
    base = AttackConfig()
    assert base.config_hash() == AttackConfig().config_hash()
    assert base.config_hash() != base.replace(dropout=0.25).config_hash()
    assert AttackConfig.from_dict(base.to_dict()) == base


def test_logging_levels(monkeypatch):
    monkeypatch.setenv("EADV_LOG", "quiet")
    assert configure_logging() == logging.WARNING
    assert configure_logging("debug") == logging.DEBUG
    with pytest.raises(ConfigError):
        configure_logging("chatty")
    configure_logging("quiet")
