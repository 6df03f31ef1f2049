"""Sectioned key-value run configuration (``[section]`` / ``key = value``).

Values are parsed as JSON when possible (numbers, booleans, lists) and kept
as strings otherwise. Precedence: built-in defaults < file < command-line.
"""

from __future__ import annotations

import configparser
import copy
import json

DEFAULTS = {
    "model": {
        "scale": 2,
        "base_channels": 32,
        "num_blocks": 4,
        "use_edge_input": True,
        "predict_edge_head": True,
        "seed": 0,
    },
    "train": {
        "step_size": 2e-4,
        "epochs": 50,
        "batch_size": 8,
        "patch_size": 32,
        "max_steps": None,
        "checkpoint_interval": 0,
        "seed": 0,
        "objective": "edge-aware",
    },
    "loss": {"alpha": 1.0, "beta": 5e-4, "extractor": "tiny"},
    "canny": {"gaussian_sigma": 1.4, "low_threshold": 0.1, "high_threshold": 0.3},
    "data": {"manifest": None, "synthetic_pairs": 64, "synthetic_hr_size": 64, "synthetic_seed": 0},
}


def _parse(value):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value.strip().strip('"')


def read_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return {s: {k: _parse(v) for k, v in parser.items(s)} for s in parser.sections()}


def resolve(file_values=None, overrides=None):
    """Merge defaults, file values and ``{"section.key": value}`` overrides.

    Unknown sections or keys are rejected.
    """
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in (file_values or {}).items():
        if section not in cfg:
            raise ValueError(f"unknown config section [{section}]")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            cfg[section][key] = value
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in cfg or key not in cfg[section]:
            raise ValueError(f"unknown config key {dotted!r}")
        cfg[section][key] = value
    return cfg
