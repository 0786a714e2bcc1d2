"""Declarative configuration for the server and batch CLI.

One YAML file configures workers, cache cap, session name, per-checker
settings, external tool commands and file-format registrations:

.. code-block:: yaml

    workers: 4
    cache_cap: 0
    session: demo
    checkers:
      arith:
        slow_ms: 0          # settings for a built-in checker
      linty:
        command: ["linty", "--check", "{file}"]
        env_override: LINTY  # environment variable overriding the tool path
    formats:
      ftl: arith
      lint: linty

Only tool paths may come from the environment; everything else lives in the
file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Optional

import yaml

from .checkers import CheckerRegistry, FileFormat, builtin_registry, external_checker


class ConfigError(ValueError):
    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ExternalTool:
    command: tuple[str, ...]
    env_override: Optional[str] = None


@dataclass
class Config:
    workers: Optional[int] = None
    cache_cap: int = 0
    session: str = "interactive"
    retain_versions: int = 10
    checker_configs: dict[str, dict] = field(default_factory=dict)
    external: dict[str, ExternalTool] = field(default_factory=dict)
    formats: dict[str, str] = field(default_factory=dict)


def parse_config(text: str) -> Config:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = (mark.line + 1) if mark else 1
        column = (mark.column + 1) if mark else 1
        raise ConfigError(exc.problem or "invalid config", line, column) from None
    if raw is None:
        return Config()
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")

    cfg = Config()
    for key in ("workers", "cache_cap", "retain_versions"):
        if key in raw:
            value = raw.pop(key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"{key} must be a nonnegative integer")
            if key == "workers":
                cfg.workers = value or None  # 0 means pick automatically
            else:
                setattr(cfg, key, value)
    if "session" in raw:
        value = raw.pop("session")
        if not isinstance(value, str) or not value:
            raise ConfigError("session must be a nonempty string")
        cfg.session = value

    checkers = raw.pop("checkers", {}) or {}
    if not isinstance(checkers, dict):
        raise ConfigError("checkers must be a mapping")
    for checker_id, settings in checkers.items():
        if settings is None:
            settings = {}
        if not isinstance(settings, dict):
            raise ConfigError(f"checker {checker_id!r} settings must be a mapping")
        settings = dict(settings)
        command = settings.pop("command", None)
        env_override = settings.pop("env_override", None)
        if command is not None:
            if (not isinstance(command, list) or not command
                    or not all(isinstance(a, str) for a in command)):
                raise ConfigError(f"checker {checker_id!r}: command must be a list of strings")
            cfg.external[checker_id] = ExternalTool(tuple(command), env_override)
        cfg.checker_configs[checker_id] = settings

    formats = raw.pop("formats", {}) or {}
    if not isinstance(formats, dict):
        raise ConfigError("formats must be a mapping")
    for ext, checker_id in formats.items():
        if not isinstance(ext, str) or not isinstance(checker_id, str):
            raise ConfigError("formats entries must map extension to checker id")
        cfg.formats[ext.lstrip(".")] = checker_id

    if raw:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(map(str, raw)))}")
    return cfg


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return parse_config(handle.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None


def build_registry(cfg: Config) -> CheckerRegistry:
    registry = builtin_registry()
    for checker_id, tool in cfg.external.items():
        registry.register_checker(checker_id, external_checker(tool.command, tool.env_override))
    for ext, checker_id in cfg.formats.items():
        if registry.format_for(ext) is None:
            registry.register_format(FileFormat(ext, checker_id))
    return registry
