import json

import pytest

from mer_util.config import RunConfig, load_config_file, resolve_run_config
from mer_util.constants import Fusion
from mer_util.errors import ConfigurationError, FormatError
from mer_util.losses import LossWeights


def test_defaults():
    config = resolve_run_config()
    assert config == RunConfig()
    assert (config.lr, config.batch_size) == (5e-5, 32)
    assert config.model_config(5, 8).k == 4
    assert config.loss_weights == LossWeights(0.1, 68.0)


def test_flags_override_file_override_defaults():
    config = resolve_run_config(
        {"epochs": 3, "lr": 1, "fusion": "add"},
        {"epochs": 5, "lr": None, "use_fcc": False},
    )
    assert config.epochs == 5
    assert config.lr == 1.0 and isinstance(config.lr, float)
    assert config.fusion is Fusion.add
    assert config.use_fcc is False


@pytest.mark.parametrize(
    "values",
    [
        {"colour": 1},
        {"fusion": "mean"},
        {"use_ccc": "yes"},
        {"epochs": 0},
        {"lr": -1.0},
        {"flip_probability": 2.0},
        {"epochs": "two"},
        {"epochs": 2.5},
        {"batch_size": [4]},
        {"lr": "fast"},
        {"lr": "nan"},
        {"k": True},
        {"seed": -1},
        {"seed": 2**32},
    ],
)
def test_invalid_values_are_rejected(values):
    with pytest.raises(ConfigurationError):
        resolve_run_config(values)


def test_load_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"epochs": 2, "lambda_m": 10}), encoding="utf-8")
    assert resolve_run_config(load_config_file(path)).lambda_m == 10.0


def test_load_config_file_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(FormatError):
        load_config_file(path)

    path.write_text('{"unknown": 1}', encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_config_file(path)

    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / "missing.json")


def test_model_config_follows_dataset_unless_overridden():
    assert RunConfig().model_config(3, 8).n_classes == 3
    assert RunConfig(n_classes=5).model_config(3, 8).n_classes == 5

    reduced = RunConfig(reduced=True, use_flow=False).model_config(3, 3)
    assert (reduced.frame_size, reduced.t, reduced.use_flow) == (16, 3, False)
    assert reduced.k == 2
    assert RunConfig(reduced=True, k=3).model_config(3, 3).k == 3


def test_numeric_strings_are_coerced():
    config = resolve_run_config({"epochs": "2", "lr": "1e-3", "n_classes": "5", "batch_size": 4.0})
    assert (config.epochs, config.lr, config.n_classes, config.batch_size) == (2, 1e-3, 5, 4)
    assert isinstance(config.epochs, int) and isinstance(config.batch_size, int)


def test_mistyped_config_file_is_a_configuration_error(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"epochs": "many"}', encoding="utf-8")
    with pytest.raises(ConfigurationError):
        resolve_run_config(load_config_file(path))
