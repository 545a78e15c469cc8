"""Pipeline configuration: one JSON file, overridable per-flag.

Secrets never live in the config; remote backends name the environment
variable that holds their key. Relative paths are resolved against the
config file's directory (or the working directory when no file is given),
so a committed config reproduces the same run anywhere.

Backend specs:
    {"kind": "mock", "script": "mocks/generator.jsonl"}
    {"kind": "http", "endpoint_url": "...", "auth_env_var": "API_KEY",
     "max_in_flight": 4, "max_attempts": 3, "base_backoff": 0.5, "timeout": 60}
Embedding backend specs additionally allow:
    {"kind": "hash", "dim": 64}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .gateway import Backend, BackendConfig, EmbeddingBackend, HashEmbedder, MockScript


class ConfigError(Exception):
    """The configuration file or flags are invalid."""


class OfflineViolation(ConfigError):
    """A remote backend was requested while running with --offline."""


_FORBIDDEN_KEYS = {
    "api_key",
    "apikey",
    "secret",
    "password",
    "auth_token",
    "access_token",
    "bearer_token",
}

_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {
        "corpus_dir": "corpus",
        "manifest": "corpus/manifest.jsonl",
        "output_dir": "out",
    },
    "truncation_limit": 120_000,
    "samples_per_prompt": 10,
    "formats": ["rephrase", "wiki", "qa"],
    "generators": [],
    "bench": {"model_id": "bench-generator", "backend": None, "n_pairs": 5,
              "n_questions": 5, "max_output_tokens": 2048},
    "judge": {"model_id": "judge", "backend": None, "max_output_tokens": 512},
    "eval_model": {"model_id": "candidate", "backend": None, "temperature": 0.0,
                   "max_output_tokens": 1024},
    "embedding": {"model_id": "text-embedding-3-small", "backend": None},
    "teacher": {"model_id": "teacher", "backend": None, "max_output_tokens": 1024},
    "policy_model": {"model_id": "policy", "backend": None, "temperature": 1.0},
    "retrieval": {"chunk_size": 2000, "overlap": 200, "k": 10, "k1": 1.2, "b": 0.75},
    "reward": {"min_reasoning_words": 50, "correct_reward": 1.0, "incorrect_reward": 0.0},
    "grpo": {"group_size": 16, "max_completion_tokens": 512},
    "abstention_policy": "exclude_from_denominator",
    "replay": {"path": None, "fraction": 0.5},
    "tokenizer": {"vocab": None},
    "prompts_dir": None,
}


def _check_no_secrets(obj: Any, path: str = "") -> None:
    if isinstance(obj, dict):
        for key, value in obj.items():
            where = f"{path}.{key}" if path else key
            if key.lower() in _FORBIDDEN_KEYS:
                raise ConfigError(
                    f"config key {where!r} looks like an inlined secret; "
                    "name an environment variable via auth_env_var instead"
                )
            _check_no_secrets(value, where)
    elif isinstance(obj, list):
        for i, value in enumerate(obj):
            _check_no_secrets(value, f"{path}[{i}]")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if path == "" and key not in base:
            raise ConfigError(f"unknown config key: {key!r}")
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = value
    return out


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    offline: bool = False

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def path(self, name: str) -> Path:
        value = self.raw["paths"][name]
        return self.resolve_path(value)

    def resolve_path(self, value: str | Path) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    @property
    def prompts_dir(self) -> Path | None:
        value = self.raw.get("prompts_dir")
        return self.resolve_path(value) if value else None

    def section(self, name: str) -> dict:
        return self.raw[name]

    def chat_backend(self, section_name: str, spec: dict | None = None) -> Backend:
        """Resolve a chat backend spec; --offline refuses remote backends."""
        if spec is None:
            spec = self.raw[section_name].get("backend")
        if not spec:
            raise ConfigError(f"{section_name}.backend is not configured")
        kind = spec.get("kind")
        if kind == "mock":
            script = spec.get("script")
            if not script:
                raise ConfigError(f"{section_name}.backend mock needs a script path")
            script_path = self.resolve_path(script)
            if not script_path.is_file():
                raise ConfigError(f"mock script not found: {script_path}")
            return MockScript.load(script_path)
        if kind == "http":
            if self.offline:
                raise OfflineViolation(
                    f"{section_name}.backend is remote; refusing to run with --offline"
                )
            try:
                return BackendConfig(
                    endpoint_url=spec["endpoint_url"],
                    auth_env_var=spec["auth_env_var"],
                    model_id=spec.get("model_id", ""),
                    max_in_flight=int(spec.get("max_in_flight", 4)),
                    max_attempts=int(spec.get("max_attempts", 3)),
                    base_backoff=float(spec.get("base_backoff", 0.5)),
                    timeout=float(spec.get("timeout", 60.0)),
                )
            except KeyError as exc:
                raise ConfigError(f"{section_name}.backend is missing {exc}") from None
        raise ConfigError(f"{section_name}.backend has unknown kind {kind!r}")

    def embedding_backend(self) -> EmbeddingBackend:
        spec = self.raw["embedding"].get("backend")
        if not spec:
            raise ConfigError("embedding.backend is not configured")
        if spec.get("kind") == "hash":
            return HashEmbedder(dim=int(spec.get("dim", 64)), salt=str(spec.get("salt", "")))
        return self.chat_backend("embedding", spec)  # type: ignore[return-value]


def load_config(
    config_path: str | Path | None = None,
    overrides: dict | None = None,
    offline: bool = False,
) -> PipelineConfig:
    """Load defaults, merge the config file, then apply flag overrides."""
    merged = dict(_DEFAULTS)
    base_dir = Path.cwd()
    if config_path is not None:
        config_path = Path(config_path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                file_cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must contain a JSON object")
        merged = _merge(merged, file_cfg)
        base_dir = config_path.resolve().parent
    if overrides:
        merged = _merge(merged, overrides)
    _check_no_secrets(merged)
    return PipelineConfig(raw=merged, base_dir=base_dir, offline=offline)
