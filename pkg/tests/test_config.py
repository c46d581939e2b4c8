import json

import pytest

from roomsense import config
from roomsense.config import RunConfig
from roomsense.errors import DataError


def test_defaults_anchor_the_documented_values():
    cfg = RunConfig()
    assert cfg.gmm.n_components == 64
    assert cfg.fusion.alpha == 0.10 and cfg.fusion.omega == 4.0 and cfg.fusion.score_components == 4
    assert cfg.features.window_s == 0.064 and cfg.features.hop_s == 0.032
    assert cfg.features.n_mel == 40 and cfg.features.n_ceps == 20
    assert len(cfg.eval.alphas) == 21 and cfg.eval.alphas[0] == 0.0 and cfg.eval.alphas[-1] == 1.0
    assert cfg.nmfd is cfg.features.nmfd


def test_dict_and_json_round_trip(tmp_path):
    cfg = config.with_overrides(RunConfig(), {"features.nmfd.K": 12, "svm.cbox": (0.5, 2.0), "seed": 3})
    assert config.from_dict(RunConfig, config.to_dict(cfg)) == cfg
    (tmp_path / "c.json").write_text(config.dumps(cfg))
    assert config.load(tmp_path / "c.json") == cfg
    assert json.loads(config.dumps(cfg))["features"]["nmfd"]["K"] == 12


def test_partial_files_keep_defaults():
    cfg = config.from_dict(RunConfig, {"gmm": {"n_components": 8}})
    assert cfg.gmm.n_components == 8 and cfg.gmm.max_iters == RunConfig().gmm.max_iters


def test_numbers_are_coerced_and_types_checked():
    assert config.from_dict(RunConfig, {"fusion": {"alpha": 1}}).fusion.alpha == 1.0
    with pytest.raises(DataError, match="fusion.omega"):
        config.from_dict(RunConfig, {"fusion": {"omega": "four"}})
    with pytest.raises(DataError):
        config.from_dict(RunConfig, {"seed": 1.5})
    with pytest.raises(DataError):
        config.from_dict(RunConfig, {"svm": {"cbox": 2.0}})


def test_unknown_fields_are_rejected():
    with pytest.raises(DataError, match="gmm.n_comp"):
        config.from_dict(RunConfig, {"gmm": {"n_comp": 3}})
    with pytest.raises(DataError):
        config.with_overrides(RunConfig(), {"nmfd.K": 3})


def test_invalid_values_surface_as_data_errors():
    with pytest.raises(DataError):
        config.from_dict(RunConfig, {"features": {"nmfd": {"K": 0}}})


def test_flat_fields_cover_every_leaf():
    names = {name for name, _, _ in config.flat_fields()}
    assert {"seed", "features.nmfd.K", "svm.cbox", "fusion.alpha", "eval.test_buildings"} <= names
    # every flat name can be overridden with its own default
    cfg = RunConfig()
    assert config.with_overrides(cfg, {n: d for n, _, d in config.flat_fields()}) == cfg


def test_unreadable_config(tmp_path):
    with pytest.raises(DataError):
        config.load(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(DataError):
        config.load(tmp_path / "bad.json")
