"""Workbench configuration: JSON file plus OWCLIP_* env-var overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError
from ..smoothing import SmoothingConfig


@dataclass
class WorkbenchConfig:
    data_dir: str
    backend: str = "precomputed"          # "precomputed" | "toy"
    store_path: str | None = None         # source embedding store for ingest
    dim: int = 16
    temperature: float = 0.07
    t_threshold: float = 0.5
    epsilon_min: float = 0.3
    epsilon_max: float = 1.0
    d_hard: float = 0.7
    n_crops: int = 3
    p_min: float = 1e-12
    n_phrases: int = 10
    prompt_length: int = 10
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.02
    holdout_fraction: float = 0.1
    seed: int = 0
    llm_provider: str = "mock"            # "mock" | "http"
    llm_endpoint: str = ""
    llm_model: str = ""
    llm_api_key_env: str = "OWCLIP_LLM_API_KEY"
    host: str = "127.0.0.1"
    port: int = 8765

    def validate(self) -> "WorkbenchConfig":
        if self.backend not in ("precomputed", "toy"):
            raise ConfigError(f"unknown backend '{self.backend}'")
        if not (0.0 < self.t_threshold < 1.0):
            raise ConfigError("t_threshold must be in (0, 1)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.llm_provider not in ("mock", "http"):
            raise ConfigError(f"unknown llm_provider '{self.llm_provider}'")
        self.smoothing().validate()
        return self

    def smoothing(self) -> SmoothingConfig:
        return SmoothingConfig(epsilon_min=self.epsilon_min, epsilon_max=self.epsilon_max,
                               d_hard=self.d_hard, n_crops=self.n_crops, p_min=self.p_min)

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_config(path=None, **overrides) -> WorkbenchConfig:
    """Build a config from an optional JSON file, env vars, and kwargs.

    Precedence: kwargs > OWCLIP_<KEY> env vars > file > defaults. The LLM
    API key itself is never a config value, only the env var name is.
    """
    values: dict = {}
    if path is not None:
        raw = Path(path).read_text()
        try:
            values.update(json.loads(raw))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    known = {f.name: f for f in fields(WorkbenchConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name, f in known.items():
        env = os.environ.get(f"OWCLIP_{name.upper()}")
        if env is not None:
            if f.type in ("int", int):
                values[name] = int(env)
            elif f.type in ("float", float):
                values[name] = float(env)
            else:
                values[name] = env
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "data_dir" not in values:
        raise ConfigError("data_dir is required")
    return WorkbenchConfig(**values).validate()
