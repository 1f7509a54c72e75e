"""Run configuration: INI-style file with ``[model]``, ``[train]``, ``[sample]``,
``[data]`` and ``[run]`` sections, overridden by command-line flags.

Precedence (lowest to highest): built-in defaults, config file, CLI flags.
The fully resolved configuration is written back out as ``resolved.ini``.
"""

import configparser
import dataclasses
import os
from pathlib import Path

from .dataset import AugmentConfig
from .denoiser import DenoiserConfig
from .errors import InvalidParameterError
from .sampler import SampleConfig
from .trainer import TrainConfig

OUTPUT_ROOT_ENV = "RECDIFFSEG_OUTPUT_ROOT"

SECTIONS = {
    "model": DenoiserConfig,
    "train": TrainConfig,
    "sample": SampleConfig,
    "augment": AugmentConfig,
}


def default_output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _coerce(field, raw):
    if raw is None:
        return None
    typ = field.type if isinstance(field.type, type) else type(field.default)
    if field.name == "steps":
        if isinstance(raw, (list, tuple)):
            return tuple(int(v) for v in raw)
        raw = str(raw).strip()
        return tuple(int(v) for v in raw.replace(",", " ").split()) if raw and raw != "None" else None
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise InvalidParameterError(f"cannot parse {field.name}={raw!r} as {typ.__name__}") from None


def build(cls, values):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise InvalidParameterError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: _coerce(fields[k], v) for k, v in values.items() if v is not None}
    return cls(**kwargs)


def read_config_file(path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file {path} not found")
        parser.read(path)
    return {s: dict(parser[s]) for s in parser.sections()}


def merge(file_values, overrides):
    """``overrides`` maps section -> {key: value or None}; ``None`` means "not given"."""
    merged = {s: dict(v) for s, v in file_values.items()}
    for section, values in overrides.items():
        for k, v in values.items():
            if v is not None:
                merged.setdefault(section, {})[k] = v
    return merged


def write_resolved(path, objects, extra=None):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, obj in objects.items():
        parser[section] = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            parser[section][f.name] = " ".join(map(str, v)) if isinstance(v, tuple) else str(v)
    if extra:
        parser["run"] = {k: str(v) for k, v in extra.items() if v is not None}
    with open(path, "w") as fh:
        parser.write(fh)
