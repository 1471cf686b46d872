import json

import pytest

from pydefgen.config import (
    PRESET_SCHEDULES,
    RunConfig,
    load_run_config,
    preset,
    run_root,
)
from pydefgen.exceptions import (
    PydefgenInputError,
    PydefgenInvalidConfig,
    PydefgenLambdaOutOfRange,
)

from tests import fixture_path, load_fixture


def test_partial_config_keeps_defaults():
    config = load_run_config(fixture_path("config/partial.json"))
    default = RunConfig()
    assert config.model.d_model == 32
    assert config.model.n_heads == 2
    assert config.model.encoder_layers == default.model.encoder_layers
    assert config.training.seed == 7
    assert config.training.batch_size == 8
    assert config.training.optimizer.lr == 0.001
    assert config.training.optimizer.beta2 == default.training.optimizer.beta2
    assert config.stage_two.lambda_ == 0.6
    assert config.stage_two.pooling == "mean"
    assert config.stage_one == default.stage_one


def test_round_trip_spells_lambda():
    config = load_run_config(fixture_path("config/partial.json"))
    document = json.loads(config.to_json())
    assert document["stage_two"]["lambda"] == 0.6
    assert "lambda_" not in document["stage_two"]
    assert RunConfig.from_json(config.to_json()) == config


def test_unknown_keys_are_rejected():
    with pytest.raises(PydefgenInvalidConfig) as error:
        RunConfig.from_json(load_fixture("config/unknown_key.json"))
    assert "depth" in str(error.value)
    with pytest.raises(PydefgenInvalidConfig):
        RunConfig.from_dict({"stages": {}})
    with pytest.raises(PydefgenInvalidConfig):
        RunConfig.from_dict({"training": {"optimizer": {"momentum": 0.9}}})


def test_invalid_values():
    with pytest.raises(PydefgenLambdaOutOfRange):
        RunConfig.from_dict({"stage_two": {"lambda": 1.5}})
    with pytest.raises(PydefgenInvalidConfig):
        RunConfig.from_dict({"training": {"batch_size": 0}})
    with pytest.raises(PydefgenInvalidConfig):
        RunConfig.from_json("{not json")


def test_missing_config_file(tmp_path):
    with pytest.raises(PydefgenInputError):
        load_run_config(tmp_path / "absent.json")


def test_presets():
    assert set(PRESET_SCHEDULES) == {"toy", "wordnet", "oxford", "urban"}
    toy = preset("toy")
    assert toy.model.dropout == 0.0
    assert toy.stage_two.lambda_ == 0.8
    assert toy.stage_two.pooling == "max"
    assert preset("oxford").stage_one.max_epoch == 50
    with pytest.raises(PydefgenInvalidConfig):
        preset("imdb")


def test_with_seed():
    config = RunConfig().with_seed(11)
    assert config.training.seed == 11
    assert config.stage_two == RunConfig().stage_two


def test_run_root(monkeypatch, tmp_path):
    monkeypatch.delenv("PYDEFGEN_RUN_ROOT", raising=False)
    assert str(run_root()) == "runs"
    monkeypatch.setenv("PYDEFGEN_RUN_ROOT", str(tmp_path))
    assert run_root() == tmp_path
