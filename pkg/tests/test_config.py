from __future__ import annotations

import pytest

from gradekit.config import (ExperimentConfig, config_from_dict, load_config, save_config)
from gradekit.errors import ConfigurationError


def test_round_trip_and_hash(tmp_path):
    cfg = ExperimentConfig()
    path = tmp_path / "cfg.json"
    save_config(path, cfg)
    back = load_config(path)
    assert back == cfg and back.hash() == cfg.hash()
    assert len(cfg.hash()) == 64


def test_threads_do_not_change_hash_but_seed_does():
    cfg = ExperimentConfig()
    assert config_from_dict({"threads": 4}).hash() == cfg.hash()
    assert cfg.with_seed(1).hash() != cfg.hash()
    s = cfg.with_seed(7)
    assert s.phantom.seed == s.grader.seed == s.classifier.seed == s.seed == 7


def test_partial_overrides():
    cfg = config_from_dict({"phantom": {"dims": [24, 28, 24]}, "grid": {"patch_dims": [8, 8, 8]},
                            "grader": {"max_epochs": 3, "unet": {"depth": 2}}})
    assert cfg.phantom.dims == (24, 28, 24) and cfg.grid.patch_dims == (8, 8, 8)
    assert cfg.grader.unet.depth == 2
    assert cfg.cohort("mci").classes == ("sMCI", "pMCI")


@pytest.mark.parametrize("bad", [
    {"nonsense": 1},
    {"grid": {"k": 0}},
    {"grid": {"downsample": 3}},
    {"grid": {"unknown": 1}},
    {"phantom": {"signature_structures": [20]}},
    {"phantom": {"bogus": 1}},
    {"cohorts": [{"name": "a", "n_per_class": 1}, {"name": "a", "n_per_class": 2}]},
    {"cohorts": [{"name": "a", "n_per_class": 1, "classes": ["CN", "MCI"]}]},
    {"seed": -1},
    {"threads": 0},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigurationError):
        config_from_dict(bad)


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigurationError):
        ExperimentConfig().cohort("missing")
