import numpy as np
import pytest

from mer_util.constants import FccMode, Fusion, Task
from mer_util.errors import CheckpointMismatchError, ConfigurationError, DimensionError
from mer_util.model import (
    ModelConfig,
    active_parameters,
    forward_clip,
    infer_shapes,
    init_model,
    load_parameter_arrays,
    parameter_arrays,
    prepare_frame,
)


def reduced_clip(config, seed=0):
    rng = np.random.default_rng(seed)
    return [prepare_frame(rng.uniform(size=(config.frame_size,) * 2), config) for _ in range(config.t)]


def test_full_geometry_shape_contract():
    shapes = infer_shapes(ModelConfig())
    assert shapes["frame"] == (1, 128, 128)
    assert shapes["backbone"][-1] == (128, 16, 16)
    assert shapes["feature"] == (128, 16, 16)
    assert shapes["mer_sequence"] == (256, 7, 16, 16)
    assert shapes["logits"] == (5,)
    assert shapes["flows"] == [(2, 128, 128)] * 7
    assert shapes["landmarks"] == [(136,)] * 7


def test_forward_clip_matches_inferred_shapes():
    config = ModelConfig.reduced()
    outputs = forward_clip(reduced_clip(config), init_model(config, seed=1), config)
    shapes = infer_shapes(config)

    assert outputs.logits.shape == shapes["logits"]
    assert [f.shape for f in outputs.flows] == shapes["flows"]
    assert [m.shape for m in outputs.landmarks] == shapes["landmarks"]
    assert [f.shape for f in outputs.features] == [shapes["feature"]] * config.t


def test_forward_clip_skips_disabled_heads():
    config = ModelConfig.reduced(use_mer=False, use_landmark=False)
    outputs = forward_clip(reduced_clip(config), init_model(config), config)
    assert outputs.logits is None
    assert outputs.landmarks == []
    assert len(outputs.flows) == config.t - 1


def test_forward_clip_rejects_wrong_clip_length():
    config = ModelConfig.reduced()
    with pytest.raises(DimensionError):
        forward_clip(reduced_clip(config)[:2], init_model(config), config)


@pytest.mark.parametrize(
    "overrides",
    [
        dict(n_classes=1),
        dict(t=1),
        dict(frame_size=20),
        dict(k=4),
        dict(k=0),
        dict(in_channels=2),
        dict(f5c_blocks=-1),
        dict(use_mer=False, use_flow=False, use_landmark=False),
    ],
)
def test_invalid_configurations_are_rejected(overrides):
    with pytest.raises(ConfigurationError):
        ModelConfig.reduced(**overrides)


def test_k_is_free_without_ccc():
    config = ModelConfig.reduced(k=0, use_ccc=False)
    assert config.uses_f5c


def test_tasks_and_f5c_switches():
    config = ModelConfig.reduced(use_flow=False, f5c_blocks=0)
    assert config.tasks == (Task.mer, Task.landmark)
    assert not config.uses_f5c

    names = [name for name, _ in active_parameters(init_model(config), config)]
    assert not any(name.startswith(("f5c", "flow")) for name in names)
    assert any(name.startswith("landmark") for name in names)


def test_config_dict_round_trip():
    config = ModelConfig.reduced(fusion=Fusion.subtract, fcc_mode=FccMode.vertical, n_classes=3)
    assert ModelConfig.from_dict(config.to_dict()) == config


@pytest.mark.parametrize("values", [dict(colour=True), dict(fusion="mean")])
def test_config_from_dict_rejects_unknown_values(values):
    with pytest.raises(ConfigurationError):
        ModelConfig.from_dict(values)


def test_initialization_is_deterministic_and_per_component():
    config = ModelConfig.reduced()
    first, second = parameter_arrays(init_model(config, 3)), parameter_arrays(init_model(config, 3))
    assert all(np.array_equal(first[name], second[name]) for name in first)

    wider = parameter_arrays(init_model(ModelConfig.reduced(mer_fc_width=8), 3))
    assert np.array_equal(first["backbone.layers.0.kernel"], wider["backbone.layers.0.kernel"])
    assert np.array_equal(first["flow.enc1.kernel"], wider["flow.enc1.kernel"])


def test_three_channel_input_replicates_gray_frame():
    config = ModelConfig.reduced(in_channels=3)
    frame = prepare_frame(np.full((16, 16), 0.25), config)
    assert frame.shape == (3, 16, 16)
    assert np.all(frame.data == 0.25)

    with pytest.raises(DimensionError):
        prepare_frame(np.zeros((15, 16)), config)


def test_load_parameter_arrays_round_trip():
    config = ModelConfig.reduced()
    source = parameter_arrays(init_model(config, 1))
    target = init_model(config, 2)
    load_parameter_arrays(target, source)
    loaded = parameter_arrays(target)
    assert all(np.array_equal(loaded[name], source[name]) for name in source)


def test_load_parameter_arrays_detects_mismatches():
    config = ModelConfig.reduced()
    arrays = dict(parameter_arrays(init_model(config)))

    reshaped = dict(arrays, **{"mer.fc2.bias": np.zeros(7)})
    with pytest.raises(CheckpointMismatchError):
        load_parameter_arrays(init_model(config), reshaped)

    missing = {name: a for name, a in arrays.items() if name != "flow.predict.kernel"}
    with pytest.raises(CheckpointMismatchError):
        load_parameter_arrays(init_model(config), missing)

    with pytest.raises(CheckpointMismatchError):
        load_parameter_arrays(init_model(config), dict(arrays, extra=np.zeros(1)))
