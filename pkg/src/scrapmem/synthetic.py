"""Seeded fixture generators: corpora, benchmark questions, graphs and run pairs.

Nothing in the engine core is random; everything here takes an explicit seed
or ``numpy.random.Generator``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .embedding import TrigramEmbedder
from .emgraph import EMGraph
from .evaluation import QuestionResult, RunResult

_ADJ = (
    "golden silver amber cobalt crimson ivory jade maple cedar willow harbor summit meadow granite coral "
    "velvet copper misty sunny northern"
).split()
_NOUN = (
    "harbor lantern anchor falcon orchard river garden bridge castle compass feather pebble thistle "
    "beacon sparrow glacier canyon prairie cove"
).split()
_KIND = "bistro cafe hotel bakery gallery pharmacy bookshop cinema garage market".split()
_FIRST = "anna tom lucia marco elena jonas sofia pavel ines oskar maya leon clara hugo nora felix".split()
_LAST = "keller brandt moreau costa lindqvist novak pereira hughes tanaka weber rossi santos".split()
_PLACES = (
    "old town square|central station|river walk|north pier|city library|market hall|east gate|"
    "harbor front|botanic garden|west park"
).split("|")
_UNITS = ("eur", "usd", "gbp")
_MONTH_NAMES = "January February March April May June July August September October November December".split()


def _title(words: str) -> str:
    return " ".join(w.capitalize() for w in words.split())


@dataclass(frozen=True)
class SyntheticDay:
    day: date
    venue: str
    amount: str
    evidence_id: str


def venue_names(rng: np.random.Generator, n: int) -> List[str]:
    """``n`` distinct three-word venue names."""
    names: List[str] = []
    seen = set()
    while len(names) < n:
        name = f"{rng.choice(_ADJ)} {rng.choice(_NOUN)} {rng.choice(_KIND)}"
        if name not in seen and name.split()[0] != name.split()[1]:
            seen.add(name)
            names.append(name)
    return [_title(n) for n in names]


def photo_like(rng: np.random.Generator, width: int, height: int) -> Image.Image:
    """Smooth colour gradients plus sensor-like noise, so JPEG sizes behave like photos."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = np.empty((height, width, 3))
    for c in range(3):
        fx, fy, ph = rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0, 2 * np.pi)
        base[..., c] = 127 + 90 * np.sin(2 * np.pi * (fx * xx / width + fy * yy / height) + ph)
    noise = rng.normal(0.0, 18.0, size=base.shape)
    return Image.fromarray(np.clip(base + noise, 0, 255).astype(np.uint8), "RGB")


def _filler(rng: np.random.Generator, sentences: int) -> str:
    parts = []
    for _ in range(sentences):
        a = f"{_title(rng.choice(_FIRST))} {_title(rng.choice(_LAST))}"
        b = f"{_title(rng.choice(_FIRST))} {_title(rng.choice(_LAST))}"
        place = _title(rng.choice(_PLACES))
        qty = int(rng.integers(2, 40))
        parts.append(f"Met {a} and {b} near {place}, walked {qty} km together.")
    return " ".join(parts)


def write_corpus(
    directory: Path,
    *,
    seed: int = 0,
    days: int = 60,
    now: date = date(2025, 1, 1),
    first_age: int = 200,
    spacing: int = 15,
    photos_per_day: int = 2,
    photo_size: Tuple[int, int] = (512, 384),
    filler_sentences: int = 12,
) -> List[SyntheticDay]:
    """Write a manifest plus media for ``days`` days aged ``first_age + spacing * i``.

    Each day has a receipt email naming a unique venue and amount (the
    evidence for its question), a busy diary email and photo-like images.
    """
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    (directory / "media").mkdir(parents=True, exist_ok=True)
    venues = venue_names(rng, days)
    lines = []
    out: List[SyntheticDay] = []
    for i in range(days):
        day = now - timedelta(days=first_age + spacing * i)
        stamp = lambda h, m: datetime.combine(day, time(h, m), tzinfo=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")  # noqa: E731
        amount = f"{int(rng.integers(12, 900))} {rng.choice(_UNITS)}"
        receipt_id = f"d{i:03d}-receipt"
        body = (
            f"Paid {amount.upper()} at {venues[i]} on {_MONTH_NAMES[day.month - 1]} {day.day}. "
            f"Order {int(rng.integers(1000, 9999))} for {int(rng.integers(1, 6))} guests."
        )
        lines.append({"id": receipt_id, "kind": "text", "timestamp": stamp(8, 30), "payload": body,
                      "meta": {"subject": f"Receipt from {venues[i]}"}})
        lines.append({"id": f"d{i:03d}-diary", "kind": "text", "timestamp": stamp(20, 15),
                      "payload": _filler(rng, filler_sentences), "meta": {"subject": "Diary"}})
        for j in range(photos_per_day):
            rel = f"media/d{i:03d}-photo{j}.jpg"
            photo_like(rng, *photo_size).save(directory / rel, quality=95)
            place = _title(rng.choice(_PLACES))
            lines.append({"id": f"d{i:03d}-photo{j}", "kind": "image", "timestamp": stamp(12 + j, 0), "payload": rel,
                          "meta": {"caption": f"street view of {place}"}})
        out.append(SyntheticDay(day, venues[i], amount, receipt_id))
    with (directory / "manifest.jsonl").open("w", encoding="utf-8") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return out


def questions_for(days: Sequence[SyntheticDay]) -> List[dict]:
    """One salient-node-answerable numeric question per synthetic day."""
    return [
        {
            "qid": f"q{i:03d}",
            "question": f"How much did I pay at {d.venue}?",
            "type": "number",
            "answer": d.amount,
            "evidence": [d.evidence_id],
            "asked_date": None,
        }
        for i, d in enumerate(days)
    ]


def write_questions(path: Path, days: Sequence[SyntheticDay]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in questions_for(days):
            rec = {k: v for k, v in rec.items() if v is not None}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Graph fixtures
# ---------------------------------------------------------------------------


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def clustered_vectors(
    rng: np.random.Generator, clusters: int, per_cluster: int, dim: int = 64, noise: float = 0.05
) -> Tuple[np.ndarray, np.ndarray]:
    """Unit vectors around mutually orthogonal centres; returns (vectors, labels)."""
    if clusters > dim:
        raise ValueError("need clusters <= dim for orthogonal centres")
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    centres = q[:, :clusters].T
    vecs, labels = [], []
    for c in range(clusters):
        for _ in range(per_cluster):
            v = centres[c] + noise * rng.normal(size=dim) / np.sqrt(dim)
            vecs.append(v / np.linalg.norm(v))
            labels.append(c)
    return np.asarray(vecs), np.asarray(labels)


def random_graph(
    rng: np.random.Generator,
    *,
    max_nodes: int = 50,
    max_paths: int = 30,
    pages: int = 6,
    dim: int = 16,
    start: date = date(2024, 1, 1),
) -> EMGraph:
    """A valid random graph: nodes mentioned on random pages, paths drawn per page."""
    graph = EMGraph(tau=1.0)
    n_nodes = int(rng.integers(2, max_nodes + 1))
    page_ids = [f"page-{(start + timedelta(days=i)).isoformat()}" for i in range(pages)]
    for j in range(n_nodes):
        home = page_ids[int(rng.integers(pages))]
        nid = graph.merge_or_insert(f"n{j}", random_unit(rng, dim), home, float(rng.uniform()), tau=1.0)
        for p in page_ids:
            if p != home and rng.uniform() < 0.25:
                graph.nodes[nid].page_salience[p] = float(rng.uniform())
    for _ in range(int(rng.integers(1, max_paths + 1))):
        p = page_ids[int(rng.integers(pages))]
        candidates = sorted(n for n, node in graph.nodes.items() if p in node.page_salience)
        if not candidates:
            continue
        size = int(rng.integers(1, min(len(candidates), 8) + 1))
        chosen = [int(x) for x in rng.choice(candidates, size=size, replace=False)]
        graph.add_path(p, date.fromisoformat(p[5:]), chosen, f"{p} path")
    # Drop mentions that no path uses, so every mention is backed by a path.
    used = {(n, path.page_id) for path in graph.paths.values() for n in path.node_ids}
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        for p in [p for p in node.page_salience if (nid, p) not in used]:
            del node.page_salience[p]
        if not node.page_salience:
            del graph.nodes[nid]
    graph._invalidate()
    return graph


def random_phrase_graph(
    rng: np.random.Generator,
    *,
    days: int = 40,
    max_paths_per_day: int = 3,
    vocab: int = 60,
    path_len: Tuple[int, int] = (2, 6),
    tau: float = 0.9,
    embedder: Optional[TrigramEmbedder] = None,
    start: date = date(2023, 1, 1),
) -> Tuple[EMGraph, List[str]]:
    """A graph over a shared phrase vocabulary using the trigram embedder."""
    embedder = embedder or TrigramEmbedder()
    words = [f"{rng.choice(_ADJ)} {rng.choice(_NOUN)}" for _ in range(vocab)]
    words = list(dict.fromkeys(words))
    graph = EMGraph(tau=tau)
    for d in range(days):
        day = start + timedelta(days=d)
        page_id = f"page-{day.isoformat()}"
        for _ in range(int(rng.integers(1, max_paths_per_day + 1))):
            size = int(rng.integers(path_len[0], path_len[1] + 1))
            chosen = [words[int(i)] for i in rng.choice(len(words), size=min(size, len(words)), replace=False)]
            ids = [graph.merge_or_insert(w, embedder.embed(w), page_id, float(rng.uniform())) for w in chosen]
            graph.add_path(page_id, day, ids, f"{day.isoformat()} : " + " -> ".join(chosen))
    return graph, words


# ---------------------------------------------------------------------------
# Run pairs for the failure taxonomy
# ---------------------------------------------------------------------------


def taxonomy_run_pair(em_graph: int, optical: int, reasoning: int, correct: int = 0, k: int = 10) -> Tuple[RunResult, RunResult]:
    """(forgetting run, baseline run) whose incorrect answers fall into the three classes as given."""
    ours: List[QuestionResult] = []
    base: List[QuestionResult] = []
    n = 0

    def add(recall: float, qs_ours: float, qs_base: float, base_recall: float) -> None:
        nonlocal n
        qid = f"t{n:05d}"
        n += 1
        ours.append(QuestionResult(qid, "number", "x", [], qs_ours, recall, qs_ours * recall))
        base.append(QuestionResult(qid, "number", "x", [], qs_base, base_recall, qs_base * base_recall))

    for _ in range(em_graph):
        add(0.0, 0.0, 0.0, 0.0)
    for _ in range(optical):
        add(1.0, 0.0, 1.0, 1.0)
    for _ in range(reasoning):
        add(1.0, 0.0, 0.0, 1.0)
    for _ in range(correct):
        add(1.0, 1.0, 1.0, 1.0)
    return RunResult(k, ours), RunResult(k, base)
