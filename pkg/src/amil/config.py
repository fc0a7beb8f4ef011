"""Flat, typed INI configuration mapped onto :class:`ExperimentConfig`.

Each key lives in the section of the module it configures.  Lists are
comma-separated; ``none`` stands for an unset optional value.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import typing
from dataclasses import fields

from .errors import ConfigError, InvalidParameterError
from .experiments import ExperimentConfig

__all__ = ["SECTIONS", "KEY_SECTION", "load_config", "parse_config", "dump_config",
           "config_hash", "coerce", "field_types"]

SECTIONS = {
    "synthdata": ["family", "dim", "nuisance_dims", "theta0", "theta1", "theta_true",
                  "train_events_per_class", "test_events_per_class", "test_frac", "val_frac",
                  "background_fracs"],
    "bagnet": ["initial_lr", "min_lr", "lr_reduction_factor", "patience", "batch_events",
               "dynamic_bags", "max_epochs", "n_models_per_point", "ensemble_space", "retry_failed"],
    "inference": ["grid_lo", "grid_hi", "grid_step", "window", "window_event_level", "n_pseudo",
                  "n_pseudo_holdout", "chunk_events", "oracle"],
    "experiments": ["mode", "bag_sizes", "master_seed", "ansatz", "ansatz_delta_theta",
                    "n_curve_bags"],
}
KEY_SECTION = {k: s for s, keys in SECTIONS.items() for k in keys}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def field_types() -> dict:
    hints = typing.get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in fields(ExperimentConfig)}


def _base(tp):
    """(scalar type, optional, is_list) for a field annotation."""
    args = typing.get_args(tp)
    optional = type(None) in args
    if optional:
        tp = next(a for a in args if a is not type(None))
    if tp is list:
        return None, optional, True
    return tp, optional, False


def coerce(key: str, text: str):
    """Parse the string form of config key ``key``."""
    types = field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    tp, optional, is_list = _base(types[key])
    s = str(text).strip()
    if optional and s.lower() in ("none", ""):
        return None
    try:
        if is_list:
            item = int if key == "bag_sizes" else float
            return [item(v) for v in s.split(",") if v.strip()]
        if tp is bool:
            if s.lower() in _TRUE:
                return True
            if s.lower() in _FALSE:
                return False
            raise ValueError(s)
        if tp is int:
            return int(s)
        if tp is float:
            v = float(s)
            return v
        return s
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r}") from None


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from INI text, then apply already-typed ``overrides``."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if KEY_SECTION.get(key) != section:
                raise ConfigError(f"key {key!r} does not belong in [{section}]")
            values[key] = coerce(key, raw)
    for key, v in (overrides or {}).items():
        if key not in KEY_SECTION:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = v
    try:
        return ExperimentConfig(**values)
    except (InvalidParameterError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text: fixed section and key order, every key present."""
    d = cfg.to_dict()
    cp = configparser.ConfigParser(interpolation=None)
    for section, keys in SECTIONS.items():
        cp[section] = {k: _format(d[k]) for k in keys}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()
