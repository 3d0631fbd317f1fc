import json

import pytest

from scg.config import ENV_VAR, ConfigError, PipelineConfig, apply_overrides, from_dict, load_config

from helpers import TINY_CONFIG


def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    cfg = load_config()
    assert cfg == PipelineConfig()
    assert cfg.detect.kappa == 3.0 and cfg.detect.alpha == 0.01 and cfg.detect.n_min == 100
    assert cfg.train.batch_size == 64 and cfg.train.lr == 1e-3 and cfg.continual.lam == 100.0
    assert cfg.reduce.window == 60.0 and cfg.simgen.n_attack_chains == 3


def test_round_trip_through_dict():
    cfg = from_dict(TINY_CONFIG)
    assert from_dict(cfg.to_dict()) == cfg
    assert cfg.model.d_m == 8 and cfg.seed == 7


def test_env_var_and_explicit_path(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 11}))
    monkeypatch.setenv(ENV_VAR, str(path))
    assert load_config().seed == 11
    other = tmp_path / "d.json"
    other.write_text(json.dumps({"seed": 12}))
    assert load_config(other).seed == 12


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError) as err:
        load_config(missing)
    assert str(missing) in str(err.value)


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\n  \"seed\": ,\n}")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(path)


@pytest.mark.parametrize("data,key", [
    ({"bogus": {}}, "bogus"),
    ({"train": {"lr": 1e-3, "typo": 1}}, "train.typo"),
    ({"train": {"batch_size": "64"}}, "train.batch_size"),
    ({"train": {"batch_size": True}}, "train.batch_size"),
    ({"detect": {"calibrate": 1}}, "detect.calibrate"),
    ({"seed": 1.5}, "seed"),
    ({"train": []}, "train"),
])
def test_unknown_keys_and_types(data, key):
    with pytest.raises(ConfigError) as err:
        from_dict(data)
    assert err.value.key == key


@pytest.mark.parametrize("data", [
    {"detect": {"alpha": 1.5}},
    {"model": {"d_t": 3}},
    {"train": {"train_fraction": 1.0}},
    {"reduce": {"window": 0}},
    {"simgen": {"duration": -5}},
    {"distrib": {"workers": 0}},
    {"continual": {"lam": -1}},
])
def test_module_invariants_checked_at_load(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_int_accepted_for_float():
    assert from_dict({"train": {"lr": 1}}).train.lr == 1.0


def test_overrides():
    cfg = apply_overrides(PipelineConfig(), ["seed=3", "train.lr=0.01", "detect.calibrate=false"])
    assert cfg.seed == 3 and cfg.train.lr == 0.01 and cfg.detect.calibrate is False
    with pytest.raises(ConfigError):
        apply_overrides(PipelineConfig(), ["train.nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides(PipelineConfig(), ["train.lr"])
