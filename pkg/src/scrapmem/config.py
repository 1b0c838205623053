"""Engine configuration: provider modes, thresholds and budgets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

from .emgraph import config_hash
from .pagebuilder import PageLayout

MODES = ("mock", "remote")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    perception: str = "mock"
    embedding: str = "mock"
    answer: str = "mock"
    judge: str = "mock"
    tau_merge: float = 0.90
    tau_q: float = 0.60
    day_budget: Optional[int] = -1  # -1 means 2k, None means unlimited
    k: int = 10
    policy: str = "no-forget"
    max_inflight: int = 4
    keyframes: int = 4
    embedding_dim: int = 64
    visual_weight: float = 0.0
    page_width: int = 1024
    tile_width: int = 512

    def __post_init__(self) -> None:
        for name in ("perception", "embedding", "judge"):
            if getattr(self, name) not in MODES:
                raise ConfigError(f"{name} mode must be one of {MODES}")
        if self.answer not in MODES + ("oracle",):
            raise ConfigError("answer mode must be mock, remote or oracle")
        for name in ("tau_merge", "tau_q"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.day_budget is not None and self.day_budget != -1 and self.day_budget < 1:
            raise ConfigError("day_budget must be >= 1, -1 (2k) or null (unlimited)")
        if self.max_inflight < 1 or self.keyframes < 1 or self.embedding_dim < 1:
            raise ConfigError("max_inflight, keyframes and embedding_dim must be >= 1")
        if self.visual_weight < 0:
            raise ConfigError("visual_weight must be >= 0")

    @property
    def layout(self) -> PageLayout:
        return PageLayout(page_width=self.page_width, tile_width=self.tile_width)

    def graph_hash(self) -> str:
        """Hash of the settings that shape the built graph."""
        return config_hash(
            {
                "perception": self.perception,
                "embedding": self.embedding,
                "embedding_dim": self.embedding_dim,
                "tau_merge": self.tau_merge,
                "keyframes": self.keyframes,
                "page_width": self.page_width,
                "tile_width": self.tile_width,
            }
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(unknown))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_config(path: Union[str, Path, None]) -> EngineConfig:
    if path is None:
        return EngineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return EngineConfig.from_json(data)
