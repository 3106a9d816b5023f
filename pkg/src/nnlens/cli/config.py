"""Typed experiment configuration: defaults < JSON file < command-line overrides.

Every effective value carries a provenance tag (``default``, ``file``,
``env`` or ``cli``). Unknown keys are rejected with the closest valid key as
a suggestion.
"""
from __future__ import annotations

import difflib
import json
import os
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..errors import ConfigError

WORKSPACE_ENV = "NNLENS_WORKSPACE"


@dataclass
class CorpusConfig:
    tasks: list[str] = field(default_factory=lambda: ["Simple", "Adv", "2Adv", "CoAdv", "NamePP", "NounPP", "NounPPAdv"])
    per_task_count: int = 600
    seed: int = 0
    lexicon: str | None = None


@dataclass
class ModelConfig:
    type: str = "lstm"
    d: int = 64
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ffn: int = 128
    max_len: int = 32
    mode: str = "causal"
    seed: int = 0


@dataclass
class TrainConfig:
    tasks: list[str] = field(default_factory=lambda: ["Simple", "NounPP"])
    lr: float = 0.01
    batch: int = 16
    epochs: int = 10
    seed: int = 0
    clip: float = 5.0
    mask_rate: float = 0.15


@dataclass
class ExtractConfig:
    tasks: list[str] = field(default_factory=lambda: ["Simple", "NounPP"])
    keys: list[str] = field(default_factory=lambda: ["1:hx"])
    selection: str = "subject"
    flush_every: int = 4
    batch_size: int = 32


@dataclass
class ProbeConfig:
    key: str = "1:hx"
    lr: float = 0.5
    l2: float = 1e-4
    epochs: int = 200
    seed: int = 0
    control_seed: int = 0


@dataclass
class SyntaxConfig:
    tasks: list[str] = field(default_factory=lambda: ["Simple", "NounPP"])


@dataclass
class AttributeConfig:
    task: str = "NounPP"
    sentences: int = 3
    method: str = "exact"
    m: int = 64
    seed: int = 0
    normalize: bool = True
    form: str = "coalition"


SECTIONS = {
    "corpus": CorpusConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "extract": ExtractConfig,
    "probe": ProbeConfig,
    "syntax": SyntaxConfig,
    "attribute": AttributeConfig,
}

CHOICES = {
    "model.type": ("lstm", "transformer"),
    "model.mode": ("causal", "masked"),
    "extract.selection": ("all", "subject", "verb"),
    "attribute.method": ("exact", "sampling", "cd"),
    "attribute.form": ("coalition", "slots"),
}


@dataclass
class Config:
    workspace: str = "workspace"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    syntax: SyntaxConfig = field(default_factory=SyntaxConfig)
    attribute: AttributeConfig = field(default_factory=AttributeConfig)
    provenance: dict[str, str] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"workspace": self.workspace}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: _copy(getattr(section, f.name)) for f in fields(section)}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def get(self, key: str) -> Any:
        obj: Any = self
        for part in key.split("."):
            obj = getattr(obj, part)
        return obj


def _copy(value):
    return list(value) if isinstance(value, list) else value


def all_keys() -> list[str]:
    keys = ["workspace"]
    for name, cls in SECTIONS.items():
        keys.extend(f"{name}.{f.name}" for f in fields(cls))
    return keys


def _field_type(key: str):
    if key == "workspace":
        return str
    section, name = key.split(".", 1)
    return typing.get_type_hints(SECTIONS[section])[name]


def _unknown(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, all_keys(), n=1, cutoff=0.5)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(f"unknown config key {key!r}{hint}")


def _type_name(tp) -> str:
    return getattr(tp, "__name__", None) or str(tp).replace("typing.", "")


def coerce(key: str, value: Any, tp=None) -> Any:
    """Check ``value`` against the declared type of ``key`` (ints are accepted for floats)."""
    tp = tp or _field_type(key)
    origin, args = typing.get_origin(tp), typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return coerce(key, value, inner[0])
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list of {_type_name(args[0])}, got {type(value).__name__}")
        return [coerce(key, v, args[0]) for v in value]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected bool, got {type(value).__name__} {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected int, got {type(value).__name__} {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected float, got {type(value).__name__} {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected str, got {type(value).__name__} {value!r}")
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{key}: expected one of {list(CHOICES[key])}, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} must look like key=value")
    key = key.strip()
    if key not in all_keys():
        raise _unknown(key)
    tp = _field_type(key)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if typing.get_origin(tp) is list and isinstance(value, str):
        value = [v for v in value.split(",") if v]
    wants_str = tp is str or (typing.get_origin(tp) in (typing.Union, types.UnionType) and str in typing.get_args(tp))
    if wants_str and not isinstance(value, (str, type(None))):
        value = raw  # e.g. workspace=123 is still a path
    return key, value


def _set(cfg: Config, key: str, value: Any, source: str) -> None:
    value = coerce(key, value)
    if key == "workspace":
        cfg.workspace = value
    else:
        section, name = key.split(".", 1)
        setattr(getattr(cfg, section), name, value)
    cfg.provenance[key] = source


def _flatten(data: Mapping[str, Any]) -> list[tuple[str, Any]]:
    out = []
    for k, v in data.items():
        if k in SECTIONS:
            if not isinstance(v, Mapping):
                raise ConfigError(f"section {k!r} must be a JSON object")
            out.extend((f"{k}.{sub}", val) for sub, val in v.items())
        else:
            out.append((k, v))
    return out


def load_config(path: str | Path | None = None, cli_overrides: Sequence[str] = (),
                env: Mapping[str, str] | None = None) -> Config:
    """Effective configuration with provenance per key.

    Precedence is command line > file > default; the workspace root may also
    come from ``NNLENS_WORKSPACE``, which beats the file but not the command
    line.
    """
    cfg = Config()
    cfg.provenance = {k: "default" for k in all_keys()}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be a JSON object")
        for key, value in _flatten(data):
            if key not in all_keys():
                raise _unknown(key)
            _set(cfg, key, value, "file")
    env = os.environ if env is None else env
    if env.get(WORKSPACE_ENV):
        _set(cfg, "workspace", env[WORKSPACE_ENV], "env")
    for text in cli_overrides:
        key, value = _parse_override(text)
        _set(cfg, key, value, "cli")
    return cfg


def config_from_dict(data: Mapping[str, Any]) -> Config:
    cfg = Config()
    cfg.provenance = {k: "default" for k in all_keys()}
    for key, value in _flatten(data):
        if key not in all_keys():
            raise _unknown(key)
        _set(cfg, key, value, "file")
    return cfg

