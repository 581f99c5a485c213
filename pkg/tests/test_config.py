import json

import pytest

from battmdp.config import ConfigError, config_hash, deep_merge, default_config, load_run_config, validate


def test_defaults_validate():
    doc = load_run_config()
    assert doc["mdp"]["weights"] == [0.4, 0.3, 0.3]
    assert "vehicle" in doc and doc["vehicle"]["motor_current"]


def test_deep_merge_leaves_base_untouched():
    base = {"a": {"b": 1, "c": 2}, "d": [1]}
    out = deep_merge(base, {"a": {"b": 5}, "d": [2]})
    assert out == {"a": {"b": 5, "c": 2}, "d": [2]}
    assert base["a"]["b"] == 1


def test_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash(default_config())) == 16


def test_schema_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="simulation"):
        validate({"simulation": {"flihgts": 10}}, "run")


def test_inverted_range_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"ranges": {"cruise_speed": [9.0, 1.0]}}))
    with pytest.raises(ConfigError, match="cruise_speed"):
        load_run_config(p)


def test_vehicle_and_mission_files(tmp_path):
    v = tmp_path / "v.json"
    v.write_text(json.dumps({"vehicle": {"mass": 3.0}}))
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"altitude": 30.0}))
    doc = load_run_config(None, v, m)
    assert doc["vehicle"]["vehicle"]["mass"] == 3.0
    assert doc["mission"]["altitude"] == 30.0 and doc["mission"]["hover_time"] == 30.0


def test_relative_vehicle_file_resolves_against_config(tmp_path):
    (tmp_path / "veh.json").write_text(json.dumps({"vehicle": {"arm_length": 0.35}}))
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"vehicle_file": "veh.json"}))
    assert load_run_config(cfg)["vehicle"]["vehicle"]["arm_length"] == 0.35


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "absent.json")
