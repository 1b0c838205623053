"""Multimodal corpus ingestion and day bucketing."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import cv2
import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

KINDS = ("image", "video", "text")
DEFAULT_KEYFRAMES = 4


class CorpusError(ValueError):
    """Raised when a manifest fails validation."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class KeyframeError(RuntimeError):
    def __init__(self, item_id: str, message: str) -> None:
        self.item_id = item_id
        super().__init__(f"{item_id}: {message}")


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime.

    Naive timestamps are taken to be UTC already.
    """
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"unparseable timestamp: {value!r}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp: {value!r}") from exc
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class MediaItem:
    id: str
    kind: str
    timestamp: datetime
    payload: str
    meta: Mapping[str, str] = field(default_factory=dict)

    @property
    def day(self) -> date:
        return self.timestamp.astimezone(timezone.utc).date()

    @property
    def is_text(self) -> bool:
        return self.kind == "text"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "timestamp": format_timestamp(self.timestamp),
            "payload": self.payload,
            "meta": dict(sorted(self.meta.items())),
        }


@dataclass(frozen=True)
class Corpus:
    """Validated corpus; ``root`` resolves relative media payloads."""

    items: Sequence[MediaItem]
    root: Path
    by_day: Mapping[date, Sequence[str]]

    @property
    def index(self) -> Dict[str, MediaItem]:
        return {item.id: item for item in self.items}

    def counts(self) -> Dict[str, int]:
        c = Counter(item.kind for item in self.items)
        return {kind: c.get(kind, 0) for kind in KINDS}

    def media_path(self, item: MediaItem) -> Path:
        return (self.root / item.payload).resolve()

    def day_items(self, day: date) -> List[MediaItem]:
        index = self.index
        return [index[i] for i in self.by_day[day]]

    def save(self, path: Path) -> None:
        """Write the canonical manifest (items ordered by timestamp, then id)."""
        lines = [json.dumps(item.to_json(), sort_keys=True, ensure_ascii=False) for item in _ordered(self.items)]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _ordered(items: Iterable[MediaItem]) -> List[MediaItem]:
    return sorted(items, key=lambda it: (it.timestamp, it.id))


def bucket_by_day(items: Iterable[MediaItem]) -> Dict[date, List[str]]:
    buckets: Dict[date, List[str]] = {}
    for item in _ordered(items):
        buckets.setdefault(item.day, []).append(item.id)
    return dict(sorted(buckets.items()))


def _parse_line(raw: str, lineno: int, root: Path, check_media: bool) -> MediaItem:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from exc
    if not isinstance(record, dict):
        raise CorpusError("manifest line must be a JSON object", lineno)
    for key in ("id", "kind", "timestamp", "payload"):
        if key not in record:
            raise CorpusError(f"missing field {key!r}", lineno)
    item_id, kind, payload = record["id"], record["kind"], record["payload"]
    if not isinstance(item_id, str) or not item_id:
        raise CorpusError("id must be a nonempty string", lineno)
    if kind not in KINDS:
        raise CorpusError(f"unknown kind {kind!r}", lineno)
    if not isinstance(payload, str):
        raise CorpusError("payload must be a string", lineno)
    try:
        ts = parse_timestamp(record["timestamp"])
    except ValueError as exc:
        raise CorpusError(str(exc), lineno) from exc
    meta = record.get("meta") or {}
    if not isinstance(meta, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in meta.items()):
        raise CorpusError("meta must map strings to strings", lineno)
    if kind != "text" and check_media:
        media = root / payload
        if not media.is_file():
            raise CorpusError(f"missing media file {media}", lineno)
    return MediaItem(id=item_id, kind=kind, timestamp=ts, payload=payload, meta=meta)


def ingest(manifest_path: Path, *, check_media: bool = True) -> Corpus:
    """Load and validate a JSONL manifest; media paths resolve against its directory."""
    manifest_path = Path(manifest_path)
    root = manifest_path.resolve().parent
    items: List[MediaItem] = []
    seen: Dict[str, int] = {}
    with manifest_path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            item = _parse_line(raw, lineno, root, check_media)
            if item.id in seen:
                raise CorpusError(f"duplicate id {item.id!r} (first seen on line {seen[item.id]})", lineno)
            seen[item.id] = lineno
            items.append(item)
    corpus = Corpus(items=tuple(_ordered(items)), root=root, by_day=bucket_by_day(items))
    logger.info("ingested %d items over %d days: %s", len(items), len(corpus.by_day), corpus.counts())
    return corpus


def video_keyframes(item: MediaItem, n: int = DEFAULT_KEYFRAMES, *, root: Optional[Path] = None) -> List[Image.Image]:
    """Sample ``min(n, frame_count)`` frames at offsets ``(i + 0.5) * duration / n``."""
    if item.kind != "video":
        raise ValueError(f"{item.id}: not a video item")
    if n < 1:
        raise ValueError("n must be >= 1")
    path = Path(item.payload) if root is None else Path(root) / item.payload
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise KeyframeError(item.id, f"cannot open video {path}")
        count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        fps = float(cap.get(cv2.CAP_PROP_FPS))
        if count <= 0 or not math.isfinite(fps) or fps <= 0:
            raise KeyframeError(item.id, "video has no decodable frames")
        if n >= count:
            indices = list(range(count))
        else:
            duration = count / fps
            indices = [min(count - 1, int(math.floor((i + 0.5) * duration / n * fps))) for i in range(n)]
        frames = []
        for idx in indices:
            cap.set(cv2.CAP_PROP_POS_FRAMES, idx)
            ok, frame = cap.read()
            if not ok or frame is None:
                raise KeyframeError(item.id, f"failed to decode frame {idx}")
            frames.append(Image.fromarray(np.ascontiguousarray(frame[:, :, ::-1])))
        return frames
    finally:
        cap.release()
