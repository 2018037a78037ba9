"""Engine configuration with flags > env vars > config file > defaults."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

ENV_PREFIX = "SOLVERFORGE_"
CONFIG_FILENAME = "solverforge.toml"


@dataclass
class EngineConfig:
    tools_dir: str = "tools"
    prompts_dir: str = ""
    runs_dir: str = "runs"
    endpoint: str = ""
    model: str = ""
    api_key: str = ""
    embed_endpoint: str = ""
    embed_model: str = "all-mpnet-base-v2"
    scripted: str = ""
    k: int = 15
    generations: int = 10
    capacity: int = 5
    max_debug: int = 3
    max_cycles: int = 3
    max_referee: int = 3
    timeout: float = 60.0
    parallelism: int = 2
    tool_budget: int = 20000
    evolution_seed: int = 0
    deny_network: bool = False

    def validate(self) -> None:
        for name in (
            "k",
            "capacity",
            "max_debug",
            "max_cycles",
            "max_referee",
            "parallelism",
            "tool_budget",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.scripted and self.endpoint:
            raise ValueError("scripted transcript and live endpoint are mutually exclusive")


def _coerce(value: str, target_type: type):
    if target_type is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def load_config(
    flags: dict | None = None,
    env: dict | None = None,
    config_path: str | Path | None = None,
    cwd: str | Path = ".",
) -> EngineConfig:
    """Build the effective config: flags beat env vars beat the config file.

    The config file is TOML (flat key = value, keys matching the field
    names); when no explicit path is given, ``solverforge.toml`` in the
    working directory is used if present.
    """
    env = dict(os.environ if env is None else env)
    data: dict = {}

    path = Path(config_path) if config_path else Path(cwd) / CONFIG_FILENAME
    if path.is_file():
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        for f in fields(EngineConfig):
            if f.name in doc:
                data[f.name] = doc[f.name]

    defaults = EngineConfig()
    for f in fields(EngineConfig):
        env_key = ENV_PREFIX + f.name.upper()
        if env_key in env:
            data[f.name] = _coerce(env[env_key], type(getattr(defaults, f.name)))

    for key, value in (flags or {}).items():
        if value is not None:
            data[key] = value

    config = EngineConfig(**data)
    config.validate()
    return config
