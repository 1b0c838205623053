"""Forgetting policies, stage mapping and per-page fidelity state."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple, Union

STAGES = ("recent", "mid", "old")
_STAGE_RANK = {name: i for i, name in enumerate(STAGES)}


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class ForgettingPolicy:
    name: str
    boundaries: Tuple[int, int]
    quality: Tuple[int, int, int]
    scale: Tuple[float, float, float]

    def __post_init__(self) -> None:
        t1, t2 = self.boundaries
        if not 0 < t1 < t2:
            raise PolicyError(f"{self.name}: boundaries must satisfy 0 < t1 < t2, got {self.boundaries}")
        if any(not 1 <= q <= 100 for q in self.quality):
            raise PolicyError(f"{self.name}: quality values must lie in 1..100")
        if any(not 0 < s <= 1 for s in self.scale):
            raise PolicyError(f"{self.name}: scale values must lie in (0, 1]")
        qr, qm, qo = self.quality
        sr, sm, so = self.scale
        if not qr >= qm >= qo:
            raise PolicyError(f"{self.name}: quality must be non-increasing with stage")
        if not sr >= sm >= so:
            raise PolicyError(f"{self.name}: scale must be non-increasing with stage")

    def params(self, stage: str) -> Tuple[int, float]:
        i = _STAGE_RANK[stage]
        return self.quality[i], self.scale[i]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "boundaries": list(self.boundaries),
            "quality": list(self.quality),
            "scale": list(self.scale),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ForgettingPolicy":
        try:
            return cls(
                name=str(data["name"]),
                boundaries=(int(data["boundaries"][0]), int(data["boundaries"][1])),
                quality=tuple(int(q) for q in data["quality"]),  # type: ignore[arg-type]
                scale=tuple(float(s) for s in data["scale"]),  # type: ignore[arg-type]
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise PolicyError(f"malformed policy: {exc}") from exc


# No-Forget has no boundaries; any valid pair works since every stage maps to (100, 1.0).
PRESETS: Dict[str, ForgettingPolicy] = {
    "no-forget": ForgettingPolicy("no-forget", (180, 730), (100, 100, 100), (1.0, 1.0, 1.0)),
    "very_soft": ForgettingPolicy("very_soft", (180, 730), (95, 82, 70), (1.0, 0.95, 0.85)),
    "softer_old": ForgettingPolicy("softer_old", (180, 730), (90, 75, 60), (1.0, 0.90, 0.80)),
    "timed-gentle": ForgettingPolicy("timed-gentle", (180, 730), (90, 70, 40), (1.0, 0.85, 0.60)),
    "boundary_365": ForgettingPolicy("boundary_365", (365, 900), (95, 75, 55), (1.0, 0.90, 0.75)),
}


def load_policy(name_or_path: Union[str, Path]) -> ForgettingPolicy:
    """Resolve a preset name or a JSON policy file."""
    key = str(name_or_path)
    if key in PRESETS:
        return PRESETS[key]
    path = Path(key)
    if path.suffix == ".json" and path.is_file():
        return ForgettingPolicy.from_json(json.loads(path.read_text(encoding="utf-8")))
    raise PolicyError(f"unknown policy {key!r}; presets: {', '.join(PRESETS)}")


def stage_of(age_days: int, policy: ForgettingPolicy) -> str:
    if age_days < 0:
        raise ValueError("age_days must be >= 0")
    t1, t2 = policy.boundaries
    if age_days <= t1:
        return "recent"
    if age_days <= t2:
        return "mid"
    return "old"


def stage_rank(stage: str) -> int:
    return _STAGE_RANK[stage]


@dataclass(frozen=True)
class DegradationState:
    stage: str = "recent"
    applied_quality: int = 100
    applied_scale: float = 1.0

    @property
    def legibility(self) -> float:
        return (self.applied_quality / 100.0) * self.applied_scale

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "applied_quality": self.applied_quality,
            "applied_scale": self.applied_scale,
            "legibility": self.legibility,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DegradationState":
        return cls(str(data["stage"]), int(data["applied_quality"]), float(data["applied_scale"]))


FRESH = DegradationState()
