"""Configuration files (YAML or JSON) -> :class:`ChainConfig`."""

from __future__ import annotations

from pathlib import Path

import yaml

from .agents import AgentRole, load_templates
from .backend import BackendSpec, ScriptedBackend
from .engine import ChainConfig
from .errors import ConfigError, TemplateError
from .scripted import rule_from_config

TOP_LEVEL = {
    "k",
    "unit_mode",
    "task",
    "hidden_cap",
    "manager_budget",
    "max_judge_calls_per_node",
    "detector",
    "filter_default",
    "workers",
    "template_dir",
    "backends",
}
BACKEND_KEYS = {
    "kind",
    "endpoint",
    "model",
    "temperature",
    "max_output_units",
    "timeout",
    "retries",
    "backoff_ms",
    "jitter",
    "api_key_env",
    "rules",
}


def _backend(raw: dict, where: str) -> BackendSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: backend must be a mapping")
    if "api_key" in raw:
        raise ConfigError(f"{where}: put API keys in environment variables, not config files")
    unknown = set(raw) - BACKEND_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown backend keys {sorted(unknown)}")
    raw = dict(raw)
    rules = raw.pop("rules", None)
    if raw.get("kind") == "scripted":
        if not rules:
            raise ConfigError(f"{where}: scripted backends need a non-empty 'rules' list")
        raw["script"] = ScriptedBackend([rule_from_config(r) for r in rules])
    try:
        return BackendSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_config(data: dict, base_dir: Path | None = None, *, k: int | None = None, temperature: float | None = None) -> ChainConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
    backends_raw = data.get("backends") or {}
    if not isinstance(backends_raw, dict):
        raise ConfigError("'backends' must map role names (or 'default') to backend settings")
    bad = set(backends_raw) - {"default", *(r.value for r in AgentRole)}
    if bad:
        raise ConfigError(f"unknown backend roles {sorted(bad)}")

    default = _backend(backends_raw["default"], "backends.default") if "default" in backends_raw else None
    role_backends = {}
    for role in AgentRole:
        if role.value in backends_raw:
            role_backends[role] = _backend(backends_raw[role.value], f"backends.{role.value}")
        elif default is not None:
            role_backends[role] = default
    if temperature is not None:
        if temperature < 0:
            raise ConfigError("temperature must be >= 0")
        for spec in role_backends.values():
            spec.temperature = temperature

    template_dir = data.get("template_dir")
    try:
        if template_dir is not None:
            template_dir = Path(template_dir)
            if base_dir is not None and not template_dir.is_absolute():
                template_dir = base_dir / template_dir
        templates = load_templates(template_dir)
    except TemplateError as exc:
        raise ConfigError(str(exc)) from None

    fields = {name: data[name] for name in TOP_LEVEL - {"template_dir", "backends"} if name in data}
    if k is not None:
        fields["k"] = k
    try:
        config = ChainConfig(role_backends=role_backends, templates=templates, **fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config.validate()


def load_config(path: str | Path, *, k: int | None = None, temperature: float | None = None) -> ChainConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    return build_config(data, path.parent, k=k, temperature=temperature)
