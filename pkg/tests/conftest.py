"""Shared fixtures: a tiny CLI configuration and the default synthetic corpus."""
import json
import sys

import pytest

from roomsense import config, pipeline, synthgen

SMALL_CONFIG = {
    "seed": 7,
    "synth": {"rooms_per_label": 3, "clips_per_room": 3, "duration_s": 1.5},
    "features": {"nmfd": {"max_iters": 30}},
    "gmm": {"n_components": 8},
    "svm": {"cbox": [1.0, 8.0], "gamma": [2.0**-7, 2.0**-3], "folds": 3},
    "eval": {"folds": 3},
}


@pytest.fixture(scope="session")
def small_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return path


@pytest.fixture(scope="session")
def default_cfg():
    return config.RunConfig()


@pytest.fixture(scope="session")
def default_manifest(tmp_path_factory, default_cfg):
    s = default_cfg.synth
    out = tmp_path_factory.mktemp("default_corpus")
    return synthgen.synth_corpus(synthgen.default_specs(), out, s.rooms_per_label, s.clips_per_room, s.buildings,
                                 default_cfg.seed, s.duration_s, s.sample_rate)


@pytest.fixture(scope="session")
def default_items(default_manifest, default_cfg):
    return pipeline.load_items(default_manifest, default_cfg.features)


@pytest.fixture(scope="session")
def unseen_run(default_items, default_cfg):
    """(bank trained on the non-held-out buildings, report on the held-out ones)."""
    held_out = set(default_cfg.eval.test_buildings)
    bank = pipeline.train_bank([it for it in default_items if it.row.building_id not in held_out], default_cfg)
    return bank, pipeline.run_unseen(default_items, default_cfg, bank)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results):
        ok, detail = results[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
