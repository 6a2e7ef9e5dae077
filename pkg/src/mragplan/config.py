"""Run configuration: YAML file with ``${ENV}`` interpolation, overridden by CLI flags."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .backends import (
    DEFAULT_TOP_K,
    FixtureSet,
    HttpChatBackend,
    HttpSearchBackend,
    LatencyModel,
    MockChatBackend,
    MockSearchBackend,
)
from .core import Category
from .errors import ConfigError
from .executor import Backends

CHAT_SLOTS = ("agent", "task", "rewrite", "judge")
SLOTS = CHAT_SLOTS + ("search",)

_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interpolate_env(value: Any, environ: dict[str, str] | None = None) -> Any:
    env = os.environ if environ is None else environ
    if isinstance(value, str):

        def sub(m: re.Match) -> str:
            name = m.group(1)
            if name not in env:
                raise ConfigError(f"environment variable {name} is not set")
            return env[name]

        return _ENV_REF.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate_env(v, env) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate_env(v, env) for v in value]
    return value


@dataclass
class BackendSlot:
    fixtures: str | None = None
    base_url: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    timeout: float = 60.0

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> BackendSlot:
        d = dict(d or {})
        unknown = set(d) - {"fixtures", "base_url", "model", "api_key_env", "timeout"}
        if unknown:
            raise ConfigError(f"unknown backend keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunConfig:
    dataset_path: str | None = None
    output_dir: str = "out"
    fixtures: str | None = None
    backends: dict[str, BackendSlot] = field(default_factory=lambda: {s: BackendSlot() for s in SLOTS})
    top_k_image: int = DEFAULT_TOP_K
    top_k_text: int = DEFAULT_TOP_K
    latency: LatencyModel = field(default_factory=LatencyModel)
    threshold: float = 4.0
    caps: dict[Category, int | None] = field(default_factory=dict)
    workers: int = 1
    seed: int = 0
    score_scale: str = "affine"
    dataset_id: str | None = None
    mock: bool = False

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RunConfig:
        try:
            return cls._from_dict(interpolate_env(raw or {}))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def _from_dict(cls, raw: dict[str, Any]) -> RunConfig:
        cfg = cls()
        cfg.dataset_path = raw.get("dataset")
        cfg.output_dir = raw.get("output_dir", cfg.output_dir)
        cfg.fixtures = raw.get("fixtures")
        slots = raw.get("backends") or {}
        unknown = set(slots) - set(SLOTS)
        if unknown:
            raise ConfigError(f"unknown backend slots {sorted(unknown)}")
        cfg.backends = {s: BackendSlot.from_dict(slots.get(s)) for s in SLOTS}
        top_k = raw.get("top_k") or {}
        if isinstance(top_k, int):
            top_k = {"i2i": top_k, "t2t": top_k}
        cfg.top_k_image = int(top_k.get("i2i", cfg.top_k_image))
        cfg.top_k_text = int(top_k.get("t2t", cfg.top_k_text))
        cfg.latency = LatencyModel(**(raw.get("latency") or {}))
        cfg.threshold = float(raw.get("threshold", cfg.threshold))
        cfg.caps = {Category.from_code(k): (None if v is None else int(v)) for k, v in (raw.get("caps") or {}).items()}
        cfg.workers = int(raw.get("workers", cfg.workers))
        cfg.seed = int(raw.get("seed", cfg.seed))
        cfg.score_scale = raw.get("score_scale", cfg.score_scale)
        cfg.dataset_id = raw.get("dataset_id")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw or {})

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.top_k_image < 1 or self.top_k_text < 1:
            raise ConfigError("top_k must be >= 1")
        if self.score_scale not in ("affine", "x20"):
            raise ConfigError(f"unknown score_scale {self.score_scale!r}")
        for name in SLOTS:
            slot = self.resolved_slot(name)
            if (slot.fixtures is None) == (slot.base_url is None):
                raise ConfigError(f"backend {name!r}: set exactly one of base_url or fixtures")
            if slot.base_url is not None and name in CHAT_SLOTS and not slot.model:
                raise ConfigError(f"backend {name!r}: live chat backend needs a model")

    def resolved_slot(self, name: str) -> BackendSlot:
        slot = self.backends.get(name) or BackendSlot()
        if self.mock:
            path = slot.fixtures or self.fixtures
            if path is None:
                raise ConfigError(f"--mock needs fixtures for backend {name!r}")
            return BackendSlot(fixtures=path)
        if slot.fixtures is None and slot.base_url is None and self.fixtures is not None:
            return BackendSlot(fixtures=self.fixtures)
        return slot

    def build_backends(self) -> Backends:
        self.validate()
        fixture_cache: dict[str, FixtureSet] = {}

        def fixtures(path: str) -> FixtureSet:
            if path not in fixture_cache:
                try:
                    fixture_cache[path] = FixtureSet.load(path)
                except (OSError, ValueError, KeyError) as exc:
                    raise ConfigError(f"cannot read fixtures {path}: {exc}") from exc
            return fixture_cache[path]

        def api_key(slot: BackendSlot) -> str | None:
            if not slot.api_key_env:
                return None
            key = os.environ.get(slot.api_key_env)
            if key is None:
                raise ConfigError(f"environment variable {slot.api_key_env} is not set")
            return key

        built: dict[str, Any] = {}
        for name in CHAT_SLOTS:
            slot = self.resolved_slot(name)
            if slot.fixtures is not None:
                built[name] = MockChatBackend(fixtures(slot.fixtures), backend_id=f"mock:{name}")
            else:
                built[name] = HttpChatBackend(slot.base_url, slot.model, api_key(slot), slot.timeout)
        slot = self.resolved_slot("search")
        if slot.fixtures is not None:
            built["search"] = MockSearchBackend(fixtures(slot.fixtures))
        else:
            built["search"] = HttpSearchBackend(slot.base_url, api_key(slot), slot.timeout)
        return Backends(**built)
