"""Service configuration: TOML file keys with R2E_-prefixed env overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class ServiceConfig:
    corpus_dir: str = "artifacts/corpus"
    retriever_dir: str = "artifacts/retriever"
    reasoner_dir: str = "artifacts/reasoner"
    index_path: str = "artifacts/evidence.r2eidx"
    host: str = "127.0.0.1"
    port: int = 8000
    default_k: int = 64
    default_c: float = 0.5
    default_m: int = 100
    session_ttl_seconds: float = 1800.0
    precision: str = "f32"
    static_dir: str = ""

    def __post_init__(self):
        if not 0.0 <= self.default_c <= 1.0:
            raise ValueError("default_c outside [0, 1]")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")


ENV_PREFIX = "R2E_"


def load_config(path: str | Path | None = None,
                env: dict[str, str] | None = None) -> ServiceConfig:
    """File values, then R2E_<UPPER_KEY> environment overrides."""
    values: dict = {}
    if path is not None:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
        known = {f.name for f in fields(ServiceConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    config = ServiceConfig(**values)

    env = os.environ if env is None else env
    overrides = {}
    for f in fields(ServiceConfig):
        env_key = ENV_PREFIX + f.name.upper()
        if env_key in env:
            raw_value = env[env_key]
            if f.type in ("int", int):
                overrides[f.name] = int(raw_value)
            elif f.type in ("float", float):
                overrides[f.name] = float(raw_value)
            else:
                overrides[f.name] = raw_value
    return replace(config, **overrides) if overrides else config
