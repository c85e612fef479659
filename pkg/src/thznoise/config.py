"""TOML run configuration: parsing, validation and serialization.

A configuration file has up to five tables, ``[quantum]``, ``[probe]``,
``[surface]``, ``[ensemble]`` and ``[output]``.  Every key is optional and
falls back to the default of the corresponding dataclass; keys that are not
part of the schema are rejected.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import tomli
import tomli_w

from .ensemble import ExperimentConfig, OutputConfig, QuantumConfig, default_surface
from .errors import ConfigError
from .probe import ProbeConfig

POSITIVE = "> 0"
NON_NEGATIVE = ">= 0"
AT_LEAST_ONE = ">= 1"


def _check(name, value, rule):
    ok = {
        POSITIVE: lambda v: v > 0,
        NON_NEGATIVE: lambda v: v >= 0,
        AT_LEAST_ONE: lambda v: v >= 1,
        None: lambda v: True,
    }[rule](value)
    if not ok:
        raise ConfigError(f"{name} must be {rule}")


# (type, constraint) for every key; "float" accepts TOML integers too
SCHEMA = {
    "quantum": {
        "x_min": ("float", None),
        "x_max": ("float", None),
        "n_points": ("int", AT_LEAST_ONE),
        "x0": ("float", None),
        "sigma": ("float", POSITIVE),
        "k0": ("float", None),
        "mass": ("float", POSITIVE),
        "charge": ("float", None),
        "deterministic": ("bool", None),
    },
    "probe": {
        "n_electrons": ("int", NON_NEGATIVE),
        "density": ("float", POSITIVE),
        "slab_area": ("float", POSITIVE),
        "slab_width": ("float", POSITIVE),
        "gamma": ("float", POSITIVE),
        "temperature": ("float", NON_NEGATIVE),
        "dt": ("float", POSITIVE),
        "softening": ("float", POSITIVE),
        "slab_x0": ("float", None),
        "axis_y": ("float", None),
        "axis_z": ("float", None),
        "mass": ("float", POSITIVE),
        "charge": ("float", None),
        "epsilon": ("float", POSITIVE),
        "background": ("bool", None),
        "frozen": ("bool", None),
    },
    "surface": {
        "x_A": ("float", None),
        "L_y": ("float", POSITIVE),
        "L_z": ("float", POSITIVE),
        "epsilon": ("float", POSITIVE),
        "y_c": ("float", None),
        "z_c": ("float", None),
    },
    "ensemble": {
        "total_time": ("float", POSITIVE),
        "record_stride": ("int", AT_LEAST_ONE),
        "seed": ("int", NON_NEGATIVE),
        "frequencies": ("float_list", POSITIVE),
        "n_experiments": ("int", AT_LEAST_ONE),
        "histogram_bins": ("int", AT_LEAST_ONE),
        "flux_table_resolution": ("int", AT_LEAST_ONE),
        "linear_threshold": ("float", POSITIVE),
        "threads": ("int", AT_LEAST_ONE),
    },
    "output": {
        "directory": ("str", None),
        "plots": ("bool", None),
        "flux_table_csv": ("bool", None),
        "trajectory_stride": ("int", NON_NEGATIVE),
    },
}


def _coerce(name, kind, value):
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{name} must be finite")
        return value
    if kind == "float_list":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{name} must be a non-empty array of numbers")
        return tuple(_coerce(name, "float", v) for v in value)
    raise AssertionError(kind)


def _section(data: dict, section: str) -> dict:
    raw = data.get(section, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"'{section}' must be a table")
    out = {}
    for key, value in raw.items():
        name = f"{section}.{key}"
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{name}'")
        kind, rule = SCHEMA[section][key]
        value = _coerce(name, kind, value)
        for v in (value if isinstance(value, tuple) else (value,)):
            _check(name, v, rule)
        out[key] = value
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section '{sorted(unknown)[0]}'")
    sections = {name: _section(data, name) for name in SCHEMA}
    try:
        return ExperimentConfig(
            quantum=QuantumConfig(**sections["quantum"]),
            probe=ProbeConfig(**sections["probe"]),
            surface=dataclasses.replace(default_surface(), **sections["surface"]),
            output=OutputConfig(**sections["output"]),
            **sections["ensemble"],
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from exc
    return config_from_dict(data)


def parse_config(path) -> ExperimentConfig:
    """Read and validate a TOML configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    return parse_config_text(text, str(path))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def table(obj, section):
        out = {}
        for key in SCHEMA[section]:
            value = getattr(obj, key)
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    return {
        "quantum": table(cfg.quantum, "quantum"),
        "probe": table(cfg.probe, "probe"),
        "surface": table(cfg.surface, "surface"),
        "ensemble": table(cfg, "ensemble"),
        "output": table(cfg.output, "output"),
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    """TOML text that parses back to an equal configuration."""
    return tomli_w.dumps(config_to_dict(cfg))


__all__ = [
    "SCHEMA",
    "config_from_dict",
    "config_to_dict",
    "parse_config",
    "parse_config_text",
    "serialize_config",
]
