import json

import pytest

from oceanssc.config import (available_presets, decoder_depth, default_config, load_config,
                             load_preset, merge, threads)
from oceanssc.errors import ConfigError


def test_defaults_describe_the_desk_scene(desk_config):
    assert desk_config.grid.dims == (32, 32, 4)
    assert desk_config.feature_shape(8) == (8, 8)
    assert desk_config.sorted_scales == [4, 8, 16]
    assert desk_config.lr == 0.1


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        default_config(learning_rate=0.5)


def test_full_scale_preset():
    assert "full" in available_presets()
    config = load_preset("full")
    assert config.grid.dims == (128, 128, 16)
    assert config.channels == 128
    assert config.feature_shape(8) == (48, 160)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_preset("kitti")


@pytest.mark.parametrize("changes", [
    {"window": 5},
    {"scales": [4, 16]},
    {"scales": [8, 8]},
    {"image_height": 40},
    {"grid": {"dims": [24, 24, 4]}},
    {"instances": {"min": 3, "max": 1}},
])
def test_inconsistent_configuration(changes):
    with pytest.raises(ConfigError):
        default_config(**changes)


def test_load_config_overlays_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"channels": 8, "grid": {"resolution": 0.2}}))
    config = load_config(str(path), seed=9)
    assert config.channels == 8
    assert config.grid.resolution == 0.2
    assert config.grid.dims == (32, 32, 4)
    assert config.seed == 9


def test_load_config_rejects_non_object(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_with_overrides_validates(desk_config):
    assert desk_config.with_overrides(steps=3).steps == 3
    with pytest.raises(ConfigError):
        desk_config.with_overrides(tau=0.0)


def test_merge_is_recursive():
    assert merge({"a": {"b": 1, "c": 2}, "d": [1]}, {"a": {"b": 3}, "d": [2]}) == \
        {"a": {"b": 3, "c": 2}, "d": [2]}


@pytest.mark.parametrize("x, depth", [(4, 0), (8, 1), (128, 5), (12, None), (2, None)])
def test_decoder_depth(x, depth):
    assert decoder_depth(x) == depth


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("OCEAN_THREADS", "3")
    assert threads() == 3
    monkeypatch.setenv("OCEAN_THREADS", "many")
    with pytest.raises(ConfigError):
        threads()
