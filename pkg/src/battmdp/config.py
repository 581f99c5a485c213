"""JSON configuration loading, schema validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema


class ConfigError(ValueError):
    pass


def _data_json(name: str) -> dict:
    return json.loads(resources.files("battmdp").joinpath(f"data/{name}").read_text())


SCHEMA = _data_json("config.schema.json")


def validate(doc: dict, kind: str) -> None:
    """Validate ``doc`` against the ``kind`` definition (run, vehicle, mission, scenario)."""
    schema = {"$ref": f"#/$defs/{kind}", "$defs": SCHEMA["$defs"]}
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{kind} config invalid at {where}: {exc.message}") from None


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config() -> dict:
    return _data_json("defaults.json")


def default_vehicle() -> dict:
    return _data_json("hexacopter.json")


def load_run_config(path: str | Path | None = None, vehicle_path: str | Path | None = None,
                    mission_path: str | Path | None = None) -> dict:
    """Defaults overlaid with the user's run config and optional vehicle/mission files.

    The returned document carries the resolved vehicle config inline under
    ``"vehicle"`` so that it hashes into the run metadata.
    """
    doc = default_config()
    base_dir = None
    if path is not None:
        user = read_json(path)
        validate(user, "run")
        doc = deep_merge(doc, user)
        base_dir = Path(path).parent
    validate(doc, "run")
    if mission_path is not None:
        mission = read_json(mission_path)
        validate(mission, "mission")
        doc["mission"] = deep_merge(doc["mission"], mission)
    vehicle_file = vehicle_path or doc.get("vehicle_file")
    vehicle = default_vehicle()
    if vehicle_file is not None:
        vpath = Path(vehicle_file)
        if vehicle_path is None and base_dir is not None and not vpath.is_absolute():
            vpath = base_dir / vpath
        user_vehicle = read_json(vpath)
        validate(user_vehicle, "vehicle")
        vehicle = deep_merge(vehicle, user_vehicle)
    validate(vehicle, "vehicle")
    doc["vehicle"] = vehicle
    params_file = doc["battery"].get("params_file")
    if params_file is not None and base_dir is not None and not Path(params_file).is_absolute():
        doc["battery"]["params_file"] = str(base_dir / params_file)
    weights = doc["mdp"]["weights"]
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigError("mdp.weights must sum to 1")
    for key, (lo, hi) in ((k, v) for k, v in doc["ranges"].items() if k != "gust_categories"):
        if lo > hi:
            raise ConfigError(f"ranges.{key}: lower bound exceeds upper bound")
    return doc


def config_hash(doc: dict) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
