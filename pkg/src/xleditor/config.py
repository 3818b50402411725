"""Run configuration: ``section.key = value`` lines, typed by their defaults."""

from __future__ import annotations

import math
from dataclasses import fields
from pathlib import Path
from typing import Any, Iterable

from .model import ModelConfig
from .objectives import TrainConfig
from .styler import TransferConfig


class ConfigError(ValueError):
    """Unknown key, malformed line or uncoercible value."""


_MODEL_SKIP = {"vocab_size", "n_styles", "l2r"}
_TRAIN_SKIP = {"seed"}
_TRANSFER_SKIP = {"s_src", "s_tgt"}

EVAL_DEFAULTS = {"mode": "xledit", "kind": "locate", "n": 200, "max_span": 5, "batch_size": 32}
PATH_DEFAULTS = {"corpus": "", "checkpoint": "", "metrics": "", "tasks": "", "out": "", "trace": "",
                 "classifier": ""}


def _dataclass_defaults(cls, skip: set[str]) -> dict[str, Any]:
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


def default_settings() -> dict[str, Any]:
    """Every accepted key with its default, in a stable order."""
    out: dict[str, Any] = {"seed": 0}
    for section, values in (("model", _dataclass_defaults(ModelConfig, _MODEL_SKIP)),
                            ("train", _dataclass_defaults(TrainConfig, _TRAIN_SKIP)),
                            ("transfer", _dataclass_defaults(TransferConfig, _TRANSFER_SKIP)),
                            ("eval", EVAL_DEFAULTS),
                            ("paths", PATH_DEFAULTS)):
        for k, v in values.items():
            out[f"{section}.{k}"] = v
    return out


def _coerce(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if math.isnan(v):
                raise ValueError(raw)
            return v
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} (expected {type(default).__name__})") from None
    return raw


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


class RunConfig:
    """Settings for one command: defaults, then a config file, then overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = default_settings()
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: Any) -> None:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        default = default_settings()[key]
        self.values[key] = _coerce(key, value, default) if isinstance(value, str) else value

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def update_lines(self, lines: Iterable[str], origin: str = "<config>") -> None:
        for lineno, line in enumerate(lines, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in text.split("=", 1))
            try:
                self.set(key, value)
            except ConfigError as e:
                raise ConfigError(f"{origin}:{lineno}: {e}") from None

    @classmethod
    def load(cls, path: str | Path | None, overrides: Iterable[str] = ()) -> "RunConfig":
        cfg = cls()
        if path:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            cfg.update_lines(text.splitlines(), str(path))
        cfg.update_lines(overrides, "--set")
        return cfg

    def section(self, name: str) -> dict[str, Any]:
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def model_config(self, vocab_size: int, n_styles: int = 0, l2r: bool = False) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, n_styles=n_styles, l2r=l2r, **self.section("model"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self["seed"], **self.section("train"))

    def transfer_config(self, s_src: int, s_tgt: int) -> TransferConfig:
        return TransferConfig(s_src=s_src, s_tgt=s_tgt, **self.section("transfer"))

    def render(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.values.items())


def keys_help() -> str:
    """One line per accepted key with its default, for ``--help``."""
    return "\n".join(f"  {k} = {format_value(v) if v != '' else '(unset)'}" for k, v in default_settings().items())
