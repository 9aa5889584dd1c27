"""Scenario configuration: YAML schema, validation, and default scenarios.

A scenario document has four sections: ``scenario`` (kinematics, tracks,
region), ``sensors`` (a list of linear or doppler sensor blocks), ``birth``,
and ``filter``.  Unknown keys are rejected with the offending key path and
its line in the source document.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml

from .member import FilterParams
from .models import (
    BirthModel,
    DopplerSensorModel,
    GroundTruth,
    LinearSensorModel,
    MotionModel,
    propagate_track,
)
from .tcphd import TcphdParams

FILTER_NAMES = ("ms-member", "ms-tcphd")

_SCHEMA = {
    "scenario": {
        "num_scans": int,
        "ts": float,
        "sigma_v": float,
        "survival_prob": float,
        "region": list,
        "tracks": list,
    },
    "sensors": list,
    "birth": {
        "existence": float,
        "means": list,
        "cov_diag": list,
    },
    "filter": {
        "name": str,
        "density": str,
        "w_max": int,
        "p_max": int,
        "prune_threshold": float,
        "cap_per_target": int,
        "particles_per_target": int,
        "birth_card_mean": float,
        "n_max": int,
    },
}

_TRACK_KEYS = {"birth_scan": int, "death_scan": int, "initial_state": list}
_SENSOR_KEYS = {
    "type": str,
    "detection_prob": float,
    "clutter_rate": float,
    "noise_std": float,
    "position": list,
    "bearing_std_deg": float,
    "doppler_std_hz": float,
    "carrier_hz": float,
    "wave_speed": float,
    "doppler_band": list,
}


class ConfigError(ValueError):
    pass


def _mark_index(doc_text: str):
    """Map dotted key paths to source lines via the composed YAML node tree."""
    marks = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                sub = f"{path}.{key_node.value}" if path else str(key_node.value)
                marks[sub] = key_node.start_mark.line + 1
                walk(value_node, sub)
        elif isinstance(node, yaml.SequenceNode):
            for idx, item in enumerate(node.value):
                sub = f"{path}[{idx}]"
                marks[sub] = item.start_mark.line + 1
                walk(item, sub)

    try:
        root = yaml.compose(doc_text)
    except yaml.YAMLError:
        return marks
    if root is not None:
        walk(root, "")
    return marks


def _reject_unknown(mapping: dict, allowed: dict, path: str, marks: dict):
    for key in mapping:
        if key not in allowed:
            sub = f"{path}.{key}" if path else str(key)
            line = marks.get(sub)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"unknown config key '{sub}'{where}")


def _coerce(value, kind, path: str):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, kind):
        return value
    raise ConfigError(f"config key '{path}' expects {kind.__name__}, got {value!r}")


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def parse_config(text: str) -> dict:
    """Parse and validate a scenario document into a plain config dict."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    marks = _mark_index(text)
    _reject_unknown(raw, _SCHEMA, "", marks)
    out: dict = {}
    for section, schema in _SCHEMA.items():
        if section not in raw:
            raise ConfigError(f"missing config section '{section}'")
        block = raw[section]
        if section == "sensors":
            if not isinstance(block, list) or not block:
                raise ConfigError("config key 'sensors' expects a nonempty list")
            out["sensors"] = [
                _parse_sensor(s, f"sensors[{i}]", marks) for i, s in enumerate(block)
            ]
            continue
        if not isinstance(block, dict):
            raise ConfigError(f"config section '{section}' must be a mapping")
        _reject_unknown(block, schema, section, marks)
        parsed = {}
        for key, value in block.items():
            parsed[key] = _coerce(value, schema[key], f"{section}.{key}")
        out[section] = parsed
    for i, track in enumerate(out["scenario"].get("tracks", [])):
        path = f"scenario.tracks[{i}]"
        if not isinstance(track, dict):
            raise ConfigError(f"config key '{path}' expects a mapping")
        _reject_unknown(track, _TRACK_KEYS, path, marks)
        for key, kind in _TRACK_KEYS.items():
            if key not in track:
                raise ConfigError(f"missing config key '{path}.{key}'")
            track[key] = _coerce(track[key], kind, f"{path}.{key}")
    name = out["filter"].get("name", "ms-member")
    if name not in FILTER_NAMES:
        raise ConfigError(f"config key 'filter.name' must be one of {FILTER_NAMES}, got {name!r}")
    density = out["filter"].get("density", "gm")
    if density not in ("gm", "particles"):
        raise ConfigError(f"config key 'filter.density' must be 'gm' or 'particles', got {density!r}")
    return out


def _parse_sensor(block, path: str, marks: dict) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"config key '{path}' expects a mapping")
    _reject_unknown(block, _SENSOR_KEYS, path, marks)
    kind = block.get("type")
    if kind not in ("linear", "doppler"):
        raise ConfigError(f"config key '{path}.type' must be 'linear' or 'doppler', got {kind!r}")
    parsed = {"type": kind}
    for key, value in block.items():
        if key == "type":
            continue
        parsed[key] = _coerce(value, _SENSOR_KEYS[key], f"{path}.{key}")
    return parsed


# ---------------------------------------------------------------------------
# Scenario assembly.


@dataclass(frozen=True)
class Scenario:
    truth: GroundTruth
    motion: MotionModel
    sensors: list
    birth: BirthModel
    region: np.ndarray
    filter_name: str
    density: str
    member_params: FilterParams
    tcphd_params: TcphdParams


def build_scenario(config: dict) -> Scenario:
    """Instantiate models from a validated config dict."""
    sc = config["scenario"]
    motion = MotionModel(ts=sc.get("ts", 1.0), sigma_v=sc.get("sigma_v", 1.0),
                         survival_prob=sc.get("survival_prob", 0.99))
    region = np.asarray(
        sc.get("region", [[-1000.0, 1000.0], [-1000.0, 1000.0]]), dtype=float
    ).reshape(2, 2)
    num_scans = sc.get("num_scans", 100)
    tracks = tuple(
        propagate_track(motion, t["initial_state"], t["birth_scan"], t["death_scan"])
        for t in sc.get("tracks", [])
    )
    truth = GroundTruth(tracks, num_scans)

    sensors = [_build_sensor(s, region) for s in config["sensors"]]

    b = config["birth"]
    birth = BirthModel(existence=b.get("existence", 0.1),
                       means=np.asarray(b["means"], dtype=float),
                       cov=np.diag(np.asarray(b["cov_diag"], dtype=float)))

    f = config["filter"]
    name = f.get("name", "ms-member")
    density = f.get("density", "gm")
    # The configured prune threshold belongs to the configured filter; the
    # other filter falls back to its density-appropriate default (Bernoulli
    # existence 0.05 / mixture weight 1e-3 for Gaussian runs, 1e-10 for SMC).
    configured_prune = f.get("prune_threshold")
    member_prune = configured_prune if (configured_prune is not None and name == "ms-member") \
        else (0.05 if density == "gm" else 1e-10)
    tcphd_prune = configured_prune if (configured_prune is not None and name == "ms-tcphd") \
        else (1e-3 if density == "gm" else 1e-10)
    member_params = FilterParams(
        w_max=f.get("w_max", 4),
        p_max=f.get("p_max", 4),
        prune_threshold=member_prune,
        cap_per_target=f.get("cap_per_target", 4),
        particles_per_target=f.get("particles_per_target", 700),
    )
    tcphd_params = TcphdParams(
        w_max=f.get("w_max", 4),
        p_max=f.get("p_max", 4),
        prune_threshold=tcphd_prune,
        cap_per_target=f.get("cap_per_target", 4),
        n_max=f.get("n_max", 20),
        birth_card_mean=f.get("birth_card_mean", 0.4),
        particles_per_target=f.get("particles_per_target", 700),
    )
    return Scenario(truth, motion, sensors, birth, region, name, density,
                    member_params, tcphd_params)


def _build_sensor(block: dict, region: np.ndarray):
    if block["type"] == "linear":
        sigma = block.get("noise_std", 10.0)
        H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        return LinearSensorModel(H=H, R=sigma**2 * np.eye(2),
                                 detection_prob=block.get("detection_prob", 0.5),
                                 clutter_rate=block.get("clutter_rate", 5.0),
                                 region=region)
    sigma_theta = math.radians(block.get("bearing_std_deg", 1.0))
    sigma_f = block.get("doppler_std_hz", 0.7)
    band = block.get("doppler_band", [-100.0, 100.0])
    return DopplerSensorModel(position=np.asarray(block["position"], dtype=float),
                              carrier_hz=block.get("carrier_hz", 300.0),
                              wave_speed=block.get("wave_speed", 1450.0),
                              R=np.diag([sigma_theta**2, sigma_f**2]),
                              detection_prob=block.get("detection_prob", 0.5),
                              clutter_rate=block.get("clutter_rate", 5.0),
                              doppler_band=(float(band[0]), float(band[1])))


# ---------------------------------------------------------------------------
# Default benchmark scenarios.  The four targets are born at the corners
# (+-400, +-400) with staggered births every 10 scans and deaths near scan
# 80; exact birth/death scans are scenario parameters, not model constants.

_DEFAULT_TRACKS = [
    {"birth_scan": 0, "death_scan": 68, "initial_state": [-400.0, -400.0, 11.0, 10.0]},
    {"birth_scan": 10, "death_scan": 74, "initial_state": [400.0, -400.0, -11.0, 10.0]},
    {"birth_scan": 20, "death_scan": 80, "initial_state": [-400.0, 400.0, 11.0, -10.0]},
    {"birth_scan": 30, "death_scan": 99, "initial_state": [400.0, 400.0, -11.0, -10.0]},
]


def _tracks_for(num_scans: int) -> list:
    out = []
    for t in _DEFAULT_TRACKS:
        if t["birth_scan"] >= num_scans:
            continue
        clipped = dict(t)
        clipped["death_scan"] = min(t["death_scan"], num_scans - 1)
        out.append(clipped)
    return out

_CORNERS = [[-400.0, -400.0, 0.0, 0.0], [400.0, -400.0, 0.0, 0.0],
            [-400.0, 400.0, 0.0, 0.0], [400.0, 400.0, 0.0, 0.0]]

_DOPPLER_POSITIONS = [(-350.0, 0.0), (350.0, 0.0), (0.0, 0.0), (0.0, -350.0), (0.0, 350.0)]


def linear_benchmark_config(n_sensors: int = 3, detection_prob: float = 0.5,
                            clutter_rate: float = 5.0, num_scans: int = 100,
                            filter_name: str = "ms-member") -> dict:
    """Linear-Gaussian benchmark: position sensors over a 2 km square."""
    return {
        "scenario": {
            "num_scans": num_scans, "ts": 1.0, "sigma_v": 1.0, "survival_prob": 0.99,
            "region": [[-1000.0, 1000.0], [-1000.0, 1000.0]],
            "tracks": _tracks_for(num_scans),
        },
        "sensors": [
            {"type": "linear", "detection_prob": detection_prob,
             "clutter_rate": clutter_rate, "noise_std": 10.0}
            for _ in range(n_sensors)
        ],
        "birth": {"existence": 0.1, "means": [list(c) for c in _CORNERS],
                  "cov_diag": [60.0, 60.0, 25.0, 25.0]},
        "filter": {"name": filter_name, "density": "gm", "w_max": 4, "p_max": 4,
                   "prune_threshold": 0.05, "cap_per_target": 4},
    }


def doppler_benchmark_config(detection_prob: float = 0.3, clutter_rate: float = 5.0,
                             num_scans: int = 100, filter_name: str = "ms-member",
                             density: str = "particles") -> dict:
    """Doppler-bearing benchmark: five sensors, SMC densities by default."""
    return {
        "scenario": {
            "num_scans": num_scans, "ts": 1.0, "sigma_v": 1.0, "survival_prob": 0.99,
            "region": [[-1000.0, 1000.0], [-1000.0, 1000.0]],
            "tracks": _tracks_for(num_scans),
        },
        "sensors": [
            {"type": "doppler", "position": list(pos), "detection_prob": detection_prob,
             "clutter_rate": clutter_rate, "bearing_std_deg": 1.0, "doppler_std_hz": 0.7,
             "carrier_hz": 300.0, "wave_speed": 1450.0, "doppler_band": [-100.0, 100.0]}
            for pos in _DOPPLER_POSITIONS
        ],
        "birth": {"existence": 0.1, "means": [list(c) for c in _CORNERS],
                  "cov_diag": [40.0, 40.0, 25.0, 25.0]},
        "filter": {"name": filter_name, "density": density, "w_max": 4, "p_max": 4,
                   "prune_threshold": 1e-10, "cap_per_target": 4,
                   "particles_per_target": 700},
    }
