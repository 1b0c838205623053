"""Query-node matching, Q-matrix path scoring and two-stage retrieval."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .chat import ChatClient, ProviderError
from .emgraph import EMGraph
from .perception import numbers_with_units, unit_words

logger = logging.getLogger(__name__)

DEFAULT_TAU_Q = 0.60
DEFAULT_K = 10
NO_EVIDENCE = "insufficient evidence"
# Scores are rounded before ranking so ties do not depend on summation order.
SCORE_DIGITS = 12


@dataclass(frozen=True)
class PageInfo:
    page_id: str
    date: date
    source_ids: Tuple[str, ...]
    texts: Mapping[str, str] = field(default_factory=dict)


@dataclass
class MemoryView:
    """Read-only view over a built store: graph plus page metadata."""

    graph: EMGraph
    pages: Dict[str, PageInfo]
    fused_text: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class QueryNodes:
    question: str
    phrases: Tuple[str, ...]
    embeddings: np.ndarray

    def __post_init__(self) -> None:
        if not self.phrases or len(self.phrases) != len(self.embeddings):
            raise ValueError("need one embedding per query phrase and at least one phrase")


@dataclass(frozen=True)
class ScoredPath:
    path_id: int
    score: float
    page_id: str
    date: date
    summary: str

    def to_json(self) -> dict:
        return {"path_id": self.path_id, "score": self.score, "page_id": self.page_id, "summary": self.summary}


@dataclass
class EvidenceSet:
    question: str
    k: int
    paths: List[ScoredPath]
    item_ids: List[str]

    def to_json(self) -> dict:
        return {
            "question": self.question,
            "k": self.k,
            "paths": [p.to_json() for p in self.paths],
            "item_ids": list(self.item_ids),
        }


@dataclass
class AnswerRecord:
    question: str
    answer: str
    evidence_path_ids: List[int]
    mode: str

    def to_json(self) -> dict:
        return {
            "question": self.question,
            "answer": self.answer,
            "evidence_path_ids": list(self.evidence_path_ids),
            "mode": self.mode,
        }


Match = Tuple[int, float]


def match_query_nodes(qn: QueryNodes, graph: EMGraph, tau_q: float = DEFAULT_TAU_Q) -> List[List[Match]]:
    """Per query phrase, the canonical nodes with cosine >= tau_q, best first."""
    out: List[List[Match]] = []
    for emb in qn.embeddings:
        ids, sims = graph.similarities(np.asarray(emb, dtype=np.float64))
        hits = [(ids[i], float(sims[i])) for i in np.flatnonzero(sims >= tau_q)] if ids else []
        hits.sort(key=lambda m: (-m[1], m[0]))
        out.append(hits)
    return out


def node_weights(matches: Sequence[Sequence[Match]]) -> Dict[int, float]:
    """Best similarity per matched node across all query phrases."""
    weights: Dict[int, float] = {}
    for hits in matches:
        for node_id, sim in hits:
            if sim > weights.get(node_id, -math.inf):
                weights[node_id] = sim
    return weights


def _rank_key(p: ScoredPath) -> Tuple[float, int, int]:
    return (-p.score, -p.date.toordinal(), p.path_id)


def score_paths(
    weights: Mapping[int, float],
    graph: EMGraph,
    *,
    visual_bonus: Optional[Mapping[str, float]] = None,
) -> List[ScoredPath]:
    """Score every path as the sum of its matched node weights; rank all paths.

    Ties go to the newer date, then the lower path id.
    """
    path_ids, node_ids, q = graph.incidence()
    if not path_ids:
        return []
    w = np.array([weights.get(n, 0.0) for n in node_ids], dtype=np.float64)
    raw = q.astype(np.float64) @ w if len(node_ids) else np.zeros(len(path_ids))
    ranked = []
    for pid, score in zip(path_ids, raw):
        path = graph.paths[pid]
        if visual_bonus:
            score += visual_bonus.get(path.page_id, 0.0)
        ranked.append(ScoredPath(pid, round(float(score), SCORE_DIGITS), path.page_id, path.date, path.summary))
    ranked.sort(key=_rank_key)
    return ranked


def visual_scores(qn: QueryNodes, graph: EMGraph, weight: float, tau_q: float) -> Dict[str, float]:
    """Per-page bonus from visual nodes; disabled when weight is 0."""
    bonus: Dict[str, float] = {}
    if weight <= 0 or not graph.visual_nodes:
        return bonus
    for vnode in graph.visual_nodes.values():
        if vnode.embedding.shape[0] != qn.embeddings.shape[1]:
            continue
        sim = float(np.max(qn.embeddings @ vnode.embedding))
        if sim >= tau_q:
            bonus[vnode.page_id] = bonus.get(vnode.page_id, 0.0) + weight * sim
    return bonus


def two_stage(ranked: Sequence[ScoredPath], k: int, day_budget: Optional[int]) -> List[ScoredPath]:
    """Keep the best ``day_budget`` days by max path score, then the top-k paths.

    ``day_budget=None`` disables day pruning (exhaustive ranking). Only paths
    with a positive score are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    positive = [p for p in ranked if p.score > 0]
    if day_budget is not None:
        if day_budget < 1:
            raise ValueError("day budget must be >= 1")
        day_best: Dict[date, float] = {}
        for p in positive:
            day_best[p.date] = max(day_best.get(p.date, -math.inf), p.score)
        days = sorted(day_best, key=lambda d: (-day_best[d], -d.toordinal()))[:day_budget]
        keep = set(days)
        positive = [p for p in positive if p.date in keep]
    return sorted(positive, key=_rank_key)[:k]


def expand_items(paths: Sequence[ScoredPath], memory: MemoryView, matched_phrases: Sequence[str]) -> List[str]:
    """Source item ids of the selected pages, in path rank order.

    Within a page, items mentioning more matched node phrases come first.
    """
    items: List[str] = []
    seen_pages = set()
    phrases = [p.lower() for p in matched_phrases]
    for path in paths:
        if path.page_id in seen_pages:
            continue
        seen_pages.add(path.page_id)
        info = memory.pages.get(path.page_id)
        if info is None:
            continue
        order = {item_id: i for i, item_id in enumerate(info.source_ids)}

        def hits(item_id: str) -> int:
            text = info.texts.get(item_id, "").lower()
            return sum(1 for ph in phrases if ph and ph in text)

        for item_id in sorted(info.source_ids, key=lambda i: (-hits(i), order[i])):
            if item_id not in items:
                items.append(item_id)
    return items


def default_day_budget(k: int) -> int:
    return 2 * k


@dataclass
class Retriever:
    """Binds the query-side providers and thresholds used by :meth:`retrieve`."""

    extract_query_nodes: Callable[[str], List[str]]
    embed_many: Callable[[Sequence[str]], np.ndarray]
    tau_q: float = DEFAULT_TAU_Q
    day_budget: Optional[int] = -1  # -1: 2k, None: unlimited
    visual_weight: float = 0.0

    def query_nodes(self, question: str) -> QueryNodes:
        phrases = self.extract_query_nodes(question)
        return QueryNodes(question, tuple(phrases), np.asarray(self.embed_many(phrases)))

    def retrieve(self, question: str, memory: MemoryView, k: int = DEFAULT_K) -> EvidenceSet:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not memory.graph.paths:
            return EvidenceSet(question, k, [], [])
        qn = self.query_nodes(question)
        matches = match_query_nodes(qn, memory.graph, self.tau_q)
        weights = node_weights(matches)
        bonus = visual_scores(qn, memory.graph, self.visual_weight, self.tau_q)
        ranked = score_paths(weights, memory.graph, visual_bonus=bonus)
        budget = default_day_budget(k) if self.day_budget == -1 else self.day_budget
        top = two_stage(ranked, k, budget)
        matched = [memory.graph.nodes[n].phrase for n in weights]
        return EvidenceSet(question, k, top, expand_items(top, memory, matched))


# ---------------------------------------------------------------------------
# Answerers
# ---------------------------------------------------------------------------

_NUMBER_QUESTION = re.compile(
    r"\b(how (much|many|long|far)|total|cost|price|amount|number of|spend|spent|paid|pay|fee|charge)\b",
    re.IGNORECASE,
)


def is_number_question(question: str, qtype: Optional[str] = None) -> bool:
    if qtype is not None:
        return qtype == "number"
    return bool(_NUMBER_QUESTION.search(question))


class MockAnswerer:
    """Extractive answerer: top path summary, or a number-with-unit for numeric questions."""

    mode = "mock"

    def answer(self, question: str, evidence: EvidenceSet, qtype: Optional[str] = None) -> AnswerRecord:
        if not evidence.paths:
            return AnswerRecord(question, NO_EVIDENCE, [], self.mode)
        top = evidence.paths[0]
        if is_number_question(question, qtype):
            query_units = unit_words(question)
            candidates = [(p, tok) for p in evidence.paths for tok in numbers_with_units(p.summary)]
            preferred = [c for c in candidates if c[1].split(" ", 1)[1] in query_units]
            for path, token in preferred or candidates:
                return AnswerRecord(question, token, [path.path_id], self.mode)
        return AnswerRecord(question, top.summary, [top.path_id], self.mode)


@dataclass
class RemoteAnswerer:
    client: ChatClient = field(default_factory=ChatClient)
    max_tokens: int = 256
    mode: str = "remote"

    def answer(
        self,
        question: str,
        evidence: EvidenceSet,
        qtype: Optional[str] = None,
        fused_text: Optional[Mapping[str, str]] = None,
    ) -> AnswerRecord:
        fused_text = fused_text or {}
        blocks = []
        for rank, path in enumerate(evidence.paths, start=1):
            blocks.append(f"[{rank}] {path.summary}")
        pages = list(dict.fromkeys(p.page_id for p in evidence.paths))
        for page_id in pages:
            if page_id in fused_text:
                blocks.append(f"--- {page_id} ---\n{fused_text[page_id]}")
        context = "\n".join(blocks) if blocks else "(no evidence retrieved)"
        messages = [
            {"role": "system", "content": "Answer the question using only the retrieved memory evidence. Be concise."},
            {"role": "user", "content": f"Evidence:\n{context}\n\nQuestion: {question}"},
        ]
        try:
            reply = self.client.complete(messages, max_tokens=self.max_tokens, temperature=0.0)
        except ProviderError as exc:
            exc.evidence = evidence  # type: ignore[attr-defined]
            raise
        return AnswerRecord(question, reply, [p.path_id for p in evidence.paths], self.mode)
