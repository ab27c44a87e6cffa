"""Run configuration: one YAML/JSON file shared by every CLI stage.

Credentials are referenced by environment-variable *name* only; keys are
never inlined in config. A seed is mandatory for sampling runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigInvalid

MODEL_ROLES = ("entity_verifier", "relation_extractor", "generator", "verifier", "judge")


@dataclass
class ModelAssignment:
    model_id: str
    provider: str = "default"
    decode_params: dict = field(default_factory=dict)


@dataclass
class ProviderConfig:
    base_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    max_inflight: int = 4
    rate_per_s: Optional[float] = None
    max_retries: int = 3


@dataclass
class RunConfig:
    workdir: Path
    cache_dir: Path
    source: dict = field(default_factory=dict)
    license_allow: list[str] = field(default_factory=list)
    intro: dict = field(default_factory=dict)
    chunking: dict = field(default_factory=dict)
    ner: dict = field(default_factory=lambda: {"provider": "lexicon"})
    models: dict[str, ModelAssignment] = field(default_factory=dict)
    providers: dict[str, ProviderConfig] = field(default_factory=dict)
    enrich: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    qa: dict = field(default_factory=dict)
    limits: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, default=str).encode("utf-8")
        ).hexdigest()[:16]

    def model_for(self, role: str) -> ModelAssignment:
        if role not in self.models:
            raise ConfigInvalid(f"no model assigned to role {role!r}")
        return self.models[role]

    def provider_for(self, name: str) -> ProviderConfig:
        if name in self.providers:
            return self.providers[name]
        if "default" in self.providers:
            return self.providers["default"]
        raise ConfigInvalid(f"no provider configuration named {name!r}")


def _require(data: dict, key: str, where: str) -> Any:
    if key not in data:
        raise ConfigInvalid(f"missing required key {key!r} in {where}")
    return data[key]


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config is not valid YAML/JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config root must be a mapping")

    paths = _require(raw, "paths", "config")
    workdir = Path(_require(paths, "workdir", "paths"))
    cache_dir = Path(paths.get("cache_dir") or workdir / "cache")

    models: dict[str, ModelAssignment] = {}
    for role, spec in (raw.get("models") or {}).items():
        if isinstance(spec, str):
            models[role] = ModelAssignment(model_id=spec)
        elif isinstance(spec, dict):
            if "model_id" not in spec:
                raise ConfigInvalid(f"model role {role!r} needs a model_id")
            models[role] = ModelAssignment(
                model_id=spec["model_id"],
                provider=spec.get("provider", "default"),
                decode_params=dict(spec.get("decode_params") or {}),
            )
        else:
            raise ConfigInvalid(f"model role {role!r} must map to a string or mapping")

    providers: dict[str, ProviderConfig] = {}
    for name, spec in (raw.get("providers") or {}).items():
        if not isinstance(spec, dict):
            raise ConfigInvalid(f"provider {name!r} must be a mapping")
        for key, value in spec.items():
            if key == "api_key" or (isinstance(value, str) and value.startswith("sk-")):
                raise ConfigInvalid(
                    f"provider {name!r}: credentials must be referenced by env var name, not inlined"
                )
        providers[name] = ProviderConfig(
            base_url=spec.get("base_url", ""),
            api_key_env=spec.get("api_key_env", "OPENAI_API_KEY"),
            max_inflight=int(spec.get("max_inflight", 4)),
            rate_per_s=spec.get("rate_per_s"),
            max_retries=int(spec.get("max_retries", 3)),
        )

    source = dict(raw.get("source") or {})
    license_allow = list(source.get("license_allow") or raw.get("license_allow") or [])

    return RunConfig(
        workdir=workdir,
        cache_dir=cache_dir,
        source=source,
        license_allow=license_allow,
        intro=dict(raw.get("intro") or {}),
        chunking=dict(raw.get("chunking") or {}),
        ner=dict(raw.get("ner") or {"provider": "lexicon"}),
        models=models,
        providers=providers,
        enrich=dict(raw.get("enrich") or {}),
        sampler=dict(raw.get("sampler") or {}),
        qa=dict(raw.get("qa") or {}),
        limits=dict(raw.get("limits") or {}),
        raw=raw,
    )
