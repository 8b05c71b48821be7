"""
End-to-end tests of the command-line entry point and its exit statuses
"""

import json

import numpy as np
import pandas as pd
import pytest

from components.audio_core import load_wav, save_wav
from components.dataset import generate_carriers
from main import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    models = root / "models"
    assert main(["gen-data", "--seed", "3", "--classes", "2", "--per-class", "5",
                 "--clip-seconds", "0.25", "--out", str(data)]) == 0
    assert main(["train", "--seed", "3", "--data", str(data), "--out", str(models)]) == 0
    carrier = root / "carrier.wav"
    save_wav(generate_carriers(seed=3, n=1, clip_seconds=0.25)[0], str(carrier))
    return root


def test_gen_data_manifest(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert len(manifest["outputs"]) == 10
    assert "timestamp" not in json.dumps(manifest)


def test_gen_data_is_reproducible(workspace, tmp_path):
    assert main(["gen-data", "--seed", "3", "--classes", "2", "--per-class", "5",
                 "--clip-seconds", "0.25", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "manifest.json").read_text() == (workspace / "data" / "manifest.json").read_text()


def test_train_writes_five_checkpoints(workspace):
    assert len(list((workspace / "models").glob("*/*.eadv"))) == 5


def test_attack(workspace, tmp_path):
    status = main(["attack", "--models", str(workspace / "models"), "--carrier", str(workspace / "carrier.wav"),
                   "--target", "1", "--iterations", "3", "--out", str(tmp_path)])
    assert status in (0, 1)
    result = json.loads((tmp_path / "attack.json").read_text())
    assert result["target"] == 1
    assert len(result["iterations"]) == 3
    assert (tmp_path / "attack.wav").exists()


def test_zero_budget_attack_returns_carrier(workspace, tmp_path):
    status = main(["attack", "--models", str(workspace / "models"), "--carrier", str(workspace / "carrier.wav"),
                   "--target", "0", "--iterations", "2", "--epsilon", "0", "--out", str(tmp_path)])
    assert status in (0, 1)
    carrier = load_wav(str(workspace / "carrier.wav"))
    assert np.array_equal(load_wav(str(tmp_path / "attack.wav")).samples, carrier.samples)


def test_evaluate_then_defend(workspace):
    out = workspace / "evaluate"
    assert main(["evaluate", "--models", str(workspace / "models"), "--carriers", "1", "--carrier-seconds", "0.25",
                 "--iterations", "2", "--strategies", "single,rge", "--out", str(out)]) == 0
    table = pd.read_csv(out / "transfer.csv")
    assert set(table["target"]) == {"target-mlp", "target-conv"}
    assert len(table) == 8
    assert len(list((out / "aes" / "rge").glob("*.json"))) == 2

    defended = workspace / "defend"
    assert main(["defend", "--models", str(workspace / "models"), "--attacks", str(out / "aes" / "rge"),
                 "--out", str(defended)]) == 0
    assert len(pd.read_csv(defended / "defense.csv")) == 14


def test_sweeps(workspace):
    models = str(workspace / "models")
    common = ["--models", models, "--carriers", "1", "--carrier-seconds", "0.25", "--iterations", "1"]
    assert main(["sweep-p", *common, "--p-values", "0,1", "--out", str(workspace / "sweep_p")]) == 0
    assert len(pd.read_csv(workspace / "sweep_p" / "sweep_p.csv")) == 8
    assert main(["sweep-noise", *common, "--levels", "0,4000", "--no-reference-rows",
                 "--out", str(workspace / "sweep_noise")]) == 0
    assert len(pd.read_csv(workspace / "sweep_noise" / "sweep_noise.csv")) == 4


def test_evaluate_and_defend_are_byte_identical(workspace, tmp_path):
    flags = ["--models", str(workspace / "models"), "--carriers", "1", "--carrier-seconds", "0.25",
             "--iterations", "2", "--strategies", "rge"]
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["evaluate", *flags, "--out", str(first)]) == 0
    assert main(["evaluate", *flags, "--out", str(second)]) == 0
    for name in ("transfer.csv", "transfer.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    attacks = str(first / "aes" / "rge")
    defended = [tmp_path / "defend_a", tmp_path / "defend_b"]
    for out in defended:
        assert main(["defend", "--models", str(workspace / "models"), "--attacks", attacks, "--out", str(out)]) == 0
    for name in ("defense.csv", "defense.json"):
        assert (defended[0] / name).read_bytes() == (defended[1] / name).read_bytes()


def test_sweep_silence(workspace):
    out = workspace / "sweep_silence"
    assert main(["sweep-silence", "--models", str(workspace / "models"), "--carriers", "1",
                 "--carrier-seconds", "0.25", "--iterations", "1", "--counts", "0,2", "--out", str(out)]) == 0
    table = pd.read_csv(out / "sweep_silence.csv")
    assert len(table) == 8
    assert set(table["parameter"]) == {"silence=0", "silence=2"}
    assert set(table["strategy"]) == {"rge", "dgwe"}


def test_single_class_is_usage_error(tmp_path):
    assert main(["gen-data", "--classes", "1", "--out", str(tmp_path)]) == 2


def test_missing_manifest_is_usage_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "out")]) == 2


def test_bad_config_is_usage_error(workspace, tmp_path):
    assert main(["attack", "--models", str(workspace / "models"), "--carrier", str(workspace / "carrier.wav"),
                 "--target", "0", "--rounds", "0", "--out", str(tmp_path)]) == 2


def test_missing_carrier_is_usage_error(workspace, tmp_path):
    assert main(["attack", "--models", str(workspace / "models"), "--carrier", str(tmp_path / "none.wav"),
                 "--target", "0", "--out", str(tmp_path)]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as err:
        main(["fly"])
    assert err.value.code == 2
