"""INI run-configuration files.

One section per settings object::

    [geometry]  layer radii, half lengths, target, field, material
    [gen]       toy generator
    [cuts]      stage 1 thresholds
    [fit]       stage 2 settings
    [vertex]    stage 3 thresholds
    [pipeline]  worker count, queue depth, chunk capacity

Missing keys keep their defaults. Unknown sections or keys are errors, and
every object re-validates itself when built.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import fields, replace

from .cuts import CutConfig
from .geometry import DetectorGeometry
from .pipeline import PipelineConfig
from .toygen import GenConfig
from .tripletfit import FitConfig
from .vertex import VertexConfig

SECTIONS = {
    "geometry": DetectorGeometry,
    "gen": GenConfig,
    "cuts": CutConfig,
    "fit": FitConfig,
    "vertex": VertexConfig,
}
PIPELINE_KEYS = ("worker_count", "chunk_queue_depth", "chunk_capacity")


class ConfigError(ValueError):
    pass


def _parse_value(text, default, key):
    text = text.strip()
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
        if default is None:
            return None if text.lower() in ("", "none", "highland") else float(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return "inf" if math.isinf(value) and value > 0 else repr(value)
    return str(value)


def _build(cls, base, items, section):
    known = {f.name for f in fields(cls)}
    changes = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        changes[key] = _parse_value(text, getattr(base, key), f"[{section}] {key}")
    try:
        return replace(base, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def loads(text, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    parts = {}
    for section in parser.sections():
        if section == "pipeline":
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        parts[section] = _build(
            SECTIONS[section], getattr(base, section), parser.items(section), section
        )
    top = {}
    if parser.has_section("pipeline"):
        for key, value in parser.items("pipeline"):
            if key not in PIPELINE_KEYS:
                raise ConfigError(f"unknown key [pipeline] {key}")
            top[key] = _parse_value(value, getattr(base, key), f"[pipeline] {key}")
    try:
        return replace(base, **parts, **top)
    except ValueError as exc:
        raise ConfigError(f"[pipeline]: {exc}") from exc


def load(path) -> PipelineConfig:
    with open(path) as fh:
        return loads(fh.read())


def dumps(config: PipelineConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in SECTIONS:
        obj = getattr(config, section)
        parser[section] = {f.name: _format_value(getattr(obj, f.name)) for f in fields(obj)}
    parser["pipeline"] = {k: _format_value(getattr(config, k)) for k in PIPELINE_KEYS}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save(config: PipelineConfig, path):
    with open(path, "w") as fh:
        fh.write(dumps(config))


def as_dict(config: PipelineConfig) -> dict:
    """Plain dict echo of a configuration, for reports."""
    out = {}
    for section in SECTIONS:
        obj = getattr(config, section)
        out[section] = {f.name: getattr(obj, f.name) for f in fields(obj)}
    out["pipeline"] = {k: getattr(config, k) for k in PIPELINE_KEYS}
    return out
