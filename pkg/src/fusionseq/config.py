"""Flat ``key = value`` configuration files.

One setting per line; ``#`` starts a comment.  Keys are the field names of
:class:`ModelConfig`, :class:`TrainConfig` and, for ``synth`` specs,
:class:`SyntheticTaskSpec`.  Unknown keys are errors.
"""

from __future__ import annotations

import os
from dataclasses import fields, replace
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

SEED_ENV = "FUSIONSEQ_SEED"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(cls, name: str, raw: str):
    kind = {f.name: f.type for f in fields(cls)}[name]
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind}") from None
    return raw


def build(cls, pairs: dict[str, str], base=None):
    """Instantiate ``cls`` from string pairs, all of which must be its fields."""
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(pairs) - names)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    values = {k: _coerce(cls, k, v) for k, v in pairs.items()}
    return replace(base, **values) if base is not None else cls(**values)


def seed_override(seed: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return seed
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_train_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Split one file between the model and training settings."""
    pairs = parse_pairs(Path(path).read_text(encoding="utf-8"), str(path))
    model_keys = ModelConfig.field_names()
    train_keys = TrainConfig.field_names()
    unknown = sorted(k for k in pairs if k not in model_keys and k not in train_keys)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    mc = build(ModelConfig, {k: v for k, v in pairs.items() if k in model_keys})
    tc = build(TrainConfig, {k: v for k, v in pairs.items() if k in train_keys})
    tc.seed = seed_override(tc.seed)
    mc.validate()
    tc.validate()
    return mc, tc


def dump(obj) -> str:
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
