"""Engine configuration: one plain dataclass, loadable from TOML or JSON."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KNOWN_ADAPTERS = ("mock", "openai-compat")


class InvalidConfigError(ValueError):
    pass


@dataclass
class EngineConfig:
    # model adapter
    adapter: str = "mock"
    base_url: str = ""
    model: str = ""
    api_key: str = ""
    script_path: str = ""        # mock adapter turn script (JSON file)
    script: list | None = None   # inline mock turns; takes precedence

    # context lifecycle
    context_limit: int = 200_000
    forward_buffer: int = 8_000
    compress_ratio: float = 0.75
    summarize_timeout: float = 60.0

    # permissions
    bash_whitelist: list[str] = field(default_factory=list)
    bash_whitelist_path: str = ""   # optional file, one entry per line

    # background execution
    max_background: int = 10
    background_retention: int = 50
    timeout_threshold: float = 120.0

    # loop and workspace
    max_turns: int = 50
    workspace: str = "."
    user_skills_dir: str = ""

    # service defaults
    host: str = "127.0.0.1"
    port: int = 8765

    def validate(self) -> None:
        if self.adapter not in KNOWN_ADAPTERS:
            raise InvalidConfigError(f"unknown adapter name: {self.adapter!r}")
        if self.context_limit <= 0:
            raise InvalidConfigError("context_limit must be positive")
        if not (0.0 < self.compress_ratio < 1.0):
            raise InvalidConfigError("compress_ratio must be in (0, 1)")
        if self.forward_buffer < 0:
            raise InvalidConfigError("forward_buffer must be nonnegative")
        if self.forward_buffer >= self.compress_ratio * self.context_limit:
            raise InvalidConfigError(
                "forward_buffer must be smaller than the compression trigger"
            )
        if self.max_background <= 0:
            raise InvalidConfigError("max_background must be positive")
        if self.background_retention < 0:
            raise InvalidConfigError("background_retention must be nonnegative")
        if self.timeout_threshold <= 0:
            raise InvalidConfigError("timeout_threshold must be positive")
        if self.max_turns <= 0:
            raise InvalidConfigError("max_turns must be positive")
        if not self.workspace:
            raise InvalidConfigError("workspace must be set")
        for entry in self.bash_whitelist:
            if not isinstance(entry, str) or not entry.strip():
                raise InvalidConfigError(f"bad whitelist entry: {entry!r}")
        if self.bash_whitelist_path:
            p = Path(self.bash_whitelist_path)
            if not p.is_file():
                raise InvalidConfigError(
                    f"bash_whitelist_path not readable: {self.bash_whitelist_path}"
                )

    def effective_whitelist(self) -> list[str]:
        """Inline entries plus the optional on-disk list, duplicates dropped."""
        entries = list(self.bash_whitelist)
        if self.bash_whitelist_path:
            for line in Path(self.bash_whitelist_path).read_text().splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    entries.append(line)
        seen: set[str] = set()
        unique = []
        for e in entries:
            if e not in seen:
                seen.add(e)
                unique.append(e)
        return unique


_FIELD_NAMES = {f.name for f in fields(EngineConfig)}


def config_from_mapping(data: dict) -> EngineConfig:
    if not isinstance(data, dict):
        raise InvalidConfigError("config document must be a table/object")
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = EngineConfig(**data)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> EngineConfig:
    """Load a TOML or JSON config file; the suffix picks the parser."""
    p = Path(path)
    if not p.is_file():
        raise InvalidConfigError(f"config file not found: {p}")
    if p.suffix == ".toml":
        data = tomllib.loads(p.read_text())
    elif p.suffix == ".json":
        data = json.loads(p.read_text())
    else:
        raise InvalidConfigError(f"unsupported config format: {p.suffix!r}")
    return config_from_mapping(data)
