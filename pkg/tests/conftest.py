from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from scrapmem.corpus import MediaItem  # noqa: E402

HOTEL_BODY = "Your reservation at Grand Plaza Lisbon from May 10 to May 12 is confirmed. Total 240 EUR."


def make_item(item_id: str, ts: str, kind: str = "text", payload: str = "hello", **meta: str) -> MediaItem:
    stamp = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return MediaItem(item_id, kind, stamp, payload, dict(meta))


def write_manifest(path: Path, records) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def noisy_image(seed: int, size=(320, 240)) -> Image.Image:
    rng = np.random.default_rng(seed)
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.stack([(xx * 255 / w), (yy * 255 / h), ((xx + yy) * 127 / (w + h))], axis=-1)
    arr = np.clip(base + rng.normal(0, 20, size=base.shape), 0, 255).astype(np.uint8)
    return Image.fromarray(arr, "RGB")


@pytest.fixture
def hotel_item() -> MediaItem:
    return make_item(
        "mail-1",
        "2022-05-07T09:12:00Z",
        payload=HOTEL_BODY,
        subject="Hotel booking confirmation",
        summary="Booked Grand Plaza Lisbon for 2 nights",
    )


@pytest.fixture
def fixture_corpus(tmp_path: Path) -> Path:
    """12 items (8 texts, 4 images) over 5 days."""
    root = tmp_path / "corpus"
    (root / "media").mkdir(parents=True)
    records = []
    texts = [
        ("2022-05-07T09:12:00Z", "Hotel booking confirmation", HOTEL_BODY),
        ("2022-05-07T18:00:00Z", "Dinner", "Dinner with Maria Costa at Casa Velha, paid 45 EUR."),
        ("2022-05-08T10:00:00Z", "Museum", "Tickets for National Tile Museum, 2 tickets, 10 EUR."),
        ("2022-05-09T08:30:00Z", "Train", "Train to Sintra Palace departs May 9 at 09:40, 4.5 km walk."),
        ("2022-05-10T12:00:00Z", "Check-in", "Checked in at Grand Plaza Lisbon, room 402."),
        ("2022-05-10T20:00:00Z", "Fado", "Fado night at Clube de Fado, 2 people, 60 EUR."),
        ("2022-05-11T09:00:00Z", "Bike", "Rented a Blue Trek Bike for 3 days, 36 EUR."),
        ("2022-05-11T19:00:00Z", "Notes", "Owned the Blue Trek Bike since March 2 according to the receipt."),
    ]
    for i, (ts, subject, body) in enumerate(texts):
        records.append({"id": f"t{i}", "kind": "text", "timestamp": ts, "payload": body, "meta": {"subject": subject}})
    for i, ts in enumerate(["2022-05-07T12:00:00Z", "2022-05-08T15:00:00Z", "2022-05-09T11:00:00Z", "2022-05-11T13:00:00Z"]):
        rel = f"media/p{i}.jpg"
        noisy_image(i).save(root / rel, quality=90)
        records.append({"id": f"p{i}", "kind": "image", "timestamp": ts, "payload": rel, "meta": {"caption": f"photo {i} of Lisbon Old Town"}})
    write_manifest(root / "manifest.jsonl", records)
    return root


# -- acceptance reporting ----------------------------------------------------------

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter) -> None:
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        verdict, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"ACCEPTANCE {number}: {verdict} {title} ({detail})")
