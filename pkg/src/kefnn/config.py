"""Per-command experiment configuration with defaults, file loading and strict key checking."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import InputError
from .pipeline import KefnnHyperparams

__all__ = ["DEFAULTS", "ConfigError", "load_config_file", "resolve_config"]


class ConfigError(InputError):
    """Malformed or unknown configuration."""


_HP = KefnnHyperparams().to_dict()

DEFAULTS: dict = {
    "gen": {"case": 1, "m": 4000, "n": 51, "sigma1_sq": None, "sigma2_sq": None, "seed": 0, "swap_betas": False,
            "out": None},
    "fit": {"data": None, "hp": _HP, "out": None},
    "eval": {"model": None, "data": None, "out": None},
    "cv": {"data": None, "grid": {"gamma": [0.02, 0.033, 0.05], "beta": [0.008, 0.02], "d1": [50, 100, 150]},
           "hp": _HP, "out": None},
    "sweep": {"kind": "n_sweep", "values": None, "case": 3, "m": None, "n": 500, "fine_grid": 4000,
              "sigma1_sq": 3.0, "sigma2_sq": 0.05, "noise_parameter": "sigma1_sq", "width": 16, "replicates": 3,
              "hp": dict(_HP, gamma=0.02), "workers": 1, "out": None},
    "baseline": {"data": None, "method": "bspline", "sizes": None, "hidden": [128, 128, 128],
                 "train": _HP["train"], "out": None},
    "replicate-table1": {"cases": [1, 2, 3, 4], "m": 4000, "n": 51, "seed": 0, "methods": ["raw", "bspline", "fpca",
                         "kefnn"], "epochs": 500, "hp": {"1": {"gamma": 0.033}, "2": {"gamma": 0.033},
                         "3": {"gamma": 0.033}, "4": {"gamma": 0.02}}, "beta": 0.008, "d1": 150, "out": None},
}

# sections whose contents are checked against a nested default instead of taken whole
_NESTED = {"hp", "train"}


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def _merge(base: dict, over: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'; allowed: {sorted(base)}")
        if key in _NESTED and isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}{key}' must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(command: str, file_doc: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then explicit command-line values."""
    if command not in DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = _merge(DEFAULTS[command], file_doc or {}, "")
    cfg = _merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None}, "")
    return cfg
