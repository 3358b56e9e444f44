import json

import pytest

from dgan.data import LongTailSpec, build_longtail_counts
from dgan.errors import ConfigError
from dgan.presets import list_presets, load_preset, load_train_config

FULLSCALE = [
    f"fullscale_{variant}_{profile}"
    for variant in ("dcgan", "contrad", "damage")
    for profile in ("full", "partial", "imbalanced")
]


def test_all_presets_listed():
    names = list_presets()
    for expected in FULLSCALE + ["smoke_dcgan", "smoke_contrad", "smoke_damage"]:
        assert expected in names
    for desk in ("desk_full", "desk_partial", "desk_imbalanced"):
        assert desk in names


@pytest.mark.parametrize("name", FULLSCALE)
def test_fullscale_presets_parse(name):
    config = load_train_config(name)
    assert config.batch_size == 64
    assert config.total_steps == 100_000
    assert config.dataset in ("full", "partial", "imbalanced")
    if config.variant == "damage":
        assert config.damage is not None


@pytest.mark.parametrize("variant", ["dcgan", "contrad", "damage"])
def test_smoke_presets_parse(variant):
    config = load_train_config(f"smoke_{variant}")
    assert config.total_steps == 500
    assert config.batch_size == 16


def test_desk_specs_build(tmp_path):
    full = LongTailSpec.from_dict(load_preset("desk_full"))
    assert build_longtail_counts(full) == [100] * 10
    imb = LongTailSpec.from_dict(load_preset("desk_imbalanced"))
    counts = build_longtail_counts(imb)
    assert max(counts) / min(counts) > 50
    assert 950 <= sum(counts) <= 1050


def test_config_path_beats_preset(tmp_path):
    config = load_train_config("smoke_dcgan")
    raw = config.to_dict()
    raw["total_steps"] = 7
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    assert load_train_config(path).total_steps == 7


def test_unknown_name_rejected():
    with pytest.raises(ConfigError, match="no config file or preset"):
        load_train_config("smoke_wgan")


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_train_config(path)
