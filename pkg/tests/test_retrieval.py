from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from oracles import exhaustive_ranking
from scrapmem.embedding import TrigramEmbedder
from scrapmem.emgraph import EMGraph
from scrapmem.evaluation import recall_at_k
from scrapmem.perception import MockPerceiver
from scrapmem.retrieval import (
    NO_EVIDENCE,
    EvidenceSet,
    MemoryView,
    MockAnswerer,
    PageInfo,
    QueryNodes,
    Retriever,
    ScoredPath,
    match_query_nodes,
    node_weights,
    score_paths,
    two_stage,
)
from scrapmem.synthetic import random_phrase_graph

EMB = TrigramEmbedder()
START = date(2023, 3, 1)


def _view(days):
    """``days``: list of (phrases, items) per consecutive day; one path per day."""
    graph = EMGraph()
    pages = {}
    for d, (phrases, items) in enumerate(days):
        day = START + timedelta(days=d)
        page_id = f"page-{day.isoformat()}"
        ids = [graph.merge_or_insert(p, EMB.embed(p), page_id, 0.5) for p in phrases]
        graph.add_path(page_id, day, ids, f"{day.isoformat()} : " + " -> ".join(phrases))
        pages[page_id] = PageInfo(page_id, day, tuple(items), {i: " ".join(phrases) for i in items})
    return MemoryView(graph, pages)


def _qn(*phrases):
    return QueryNodes("q", tuple(phrases), EMB.embed_many(phrases))


def _retriever(day_budget=-1):
    return Retriever(MockPerceiver().extract_query_nodes, EMB.embed_many, day_budget=day_budget)


def test_identical_phrase_weight_one() -> None:
    view = _view([(["grand plaza lisbon", "240 eur"], ["a"])])
    (hits, ) = match_query_nodes(_qn("grand plaza lisbon"), view.graph)
    assert hits[0][1] == pytest.approx(1.0)


def test_unmatched_phrase_is_empty() -> None:
    view = _view([(["grand plaza lisbon"], ["a"])])
    assert match_query_nodes(_qn("zzzz qqqq"), view.graph) == [[]]


def test_disjoint_matches_add_up() -> None:
    view = _view([(["grand plaza lisbon", "blue trek bike", "fado night"], ["a"])])
    qn = _qn("grand plaza lisbon", "blue trek bike")
    per = match_query_nodes(qn, view.graph)
    ids, cents = zip(*[(n.node_id, n.centroid) for n in view.graph.nodes.values()])
    brute = [{i for i, c in zip(ids, cents) if float(e @ c) >= 0.6} for e in qn.embeddings]
    assert [set(n for n, _ in h) for h in per] == brute
    assert not brute[0] & brute[1]
    assert len(node_weights(per)) == len(brute[0]) + len(brute[1])


def test_no_matches_rank_by_recency() -> None:
    view = _view([(["a1", "b1"], ["x"]), (["c1", "d1"], ["y"]), (["e1", "f1"], ["z"])])
    ranked = score_paths({}, view.graph)
    assert all(p.score == 0 for p in ranked)
    assert [p.date for p in ranked] == sorted((p.date for p in ranked), reverse=True)


def test_single_match_ranks_first() -> None:
    view = _view([(["alpha node", "beta node"], ["x"]), (["gamma node", "delta node"], ["y"])])
    target = next(n for n in view.graph.nodes.values() if n.phrase == "alpha node")
    ranked = score_paths({target.node_id: 0.7}, view.graph)
    assert ranked[0].score == 0.7 and ranked[0].page_id.endswith("03-01")


def test_scores_match_exhaustive_oracle() -> None:
    rng = np.random.default_rng(2)
    graph, words = random_phrase_graph(rng, days=12, max_paths_per_day=3)
    assert len(graph.paths) >= 20
    qn = _qn(*words[:4])
    weights = node_weights(match_query_nodes(qn, graph))
    ranked = score_paths(weights, graph)
    oracle = exhaustive_ranking({p.path_id: (p.date.toordinal(), p.node_ids) for p in graph.paths.values()}, weights)
    assert [(p.path_id, p.score) for p in ranked] == oracle


def test_k_clamps_to_available_paths() -> None:
    view = _view([(["alpha node"], ["x"]), (["alpha node", "beta node"], ["y"]), (["alpha node", "gamma"], ["z"])])
    ev = _retriever().retrieve("Where was Alpha Node?", view, 10)
    assert len(ev.paths) <= 3
    scores = [p.score for p in ev.paths]
    assert scores == sorted(scores, reverse=True)


def test_one_of_two_evidence_items_gives_half_recall() -> None:
    view = _view([(["harbor sunset photo", "north pier"], ["photo-1", "note-1"]), (["city library"], ["photo-2"])])
    ev = _retriever().retrieve("Photos of Harbor Sunset Photo at North Pier", view, 10)
    assert recall_at_k({"photo-1", "photo-2"}, ev.item_ids[:10]) == 0.5


def test_day_budget_one_drops_dominated_day() -> None:
    view = _view(
        [
            (["lisbon trip", "grand plaza lisbon"], ["true"]),
            (["lisbon trip", "grand plaza lisbon", "lisbon airport"], ["decoy"]),
        ]
    )
    question = "Lisbon Trip and Grand Plaza Lisbon near Lisbon Airport"
    narrow = _retriever(day_budget=1).retrieve(question, view, 10)
    wide = _retriever(day_budget=None).retrieve(question, view, 10)
    assert [p.page_id for p in narrow.paths] == ["page-2023-03-02"]
    assert {p.page_id for p in wide.paths} == {"page-2023-03-01", "page-2023-03-02"}


def test_two_stage_unlimited_equals_topk() -> None:
    ranked = [ScoredPath(i, s, f"p{i}", START + timedelta(days=i % 5), "") for i, s in enumerate([3, 2, 2, 1, 0.5, 0])]
    ranked.sort(key=lambda p: (-p.score, -p.date.toordinal(), p.path_id))
    assert two_stage(ranked, 3, None) == ranked[:3]
    assert all(p.score > 0 for p in two_stage(ranked, 10, None))


def test_topk_is_prefix_of_topk_plus_one() -> None:
    rng = np.random.default_rng(8)
    graph, words = random_phrase_graph(rng, days=15)
    view = MemoryView(graph, {})
    r = Retriever(lambda q: q.split(","), EMB.embed_many, day_budget=None)
    question = ",".join(words[:3])
    for k in range(1, 12):
        a = r.retrieve(question, view, k).paths
        b = r.retrieve(question, view, k + 1).paths
        assert a == b[: len(a)]


def test_retrieval_is_deterministic() -> None:
    view = _view([(["alpha node", "beta node"], ["x"]), (["alpha node"], ["y"])])
    r = _retriever()
    assert r.retrieve("Alpha Node", view, 5).to_json() == r.retrieve("Alpha Node", view, 5).to_json()


def test_empty_graph_gives_empty_evidence() -> None:
    ev = _retriever().retrieve("Anything Here", MemoryView(EMGraph(), {}), 10)
    assert ev.paths == [] and ev.item_ids == []


def test_items_ranked_by_matched_phrases() -> None:
    view = _view([(["blue trek bike", "march 2"], ["photo", "receipt"])])
    info = view.pages["page-2023-03-01"]
    view.pages["page-2023-03-01"] = PageInfo(info.page_id, info.date, ("photo", "receipt"), {"photo": "sunset", "receipt": "Blue Trek Bike"})
    ev = _retriever().retrieve("Blue Trek Bike", view, 10)
    assert ev.item_ids == ["receipt", "photo"]


def test_report_shape() -> None:
    view = _view([(["alpha node"], ["x"])])
    report = _retriever().retrieve("Alpha Node", view, 10).to_json()
    assert set(report) == {"question", "k", "paths", "item_ids"}
    assert set(report["paths"][0]) == {"path_id", "score", "page_id", "summary"}


def test_mock_answer_without_evidence() -> None:
    rec = MockAnswerer().answer("How much?", EvidenceSet("How much?", 10, [], []))
    assert rec.answer == NO_EVIDENCE and rec.evidence_path_ids == []


def test_mock_answer_extracts_amount() -> None:
    top = ScoredPath(1, 2.0, "page-2022-05-07", date(2022, 5, 7), "2022-05-07 : grand plaza lisbon -> 2 nights -> 240 eur")
    rec = MockAnswerer().answer("What was the total cost in EUR of the hotel?", EvidenceSet("q", 10, [top], []), "number")
    assert rec.answer == "240 eur" and rec.evidence_path_ids == [1]


def test_mock_answer_open_question_returns_summary() -> None:
    top = ScoredPath(4, 1.0, "page-x", date(2022, 5, 7), "2022-05-07 : fado night -> clube de fado")
    rec = MockAnswerer().answer("What did we do at night?", EvidenceSet("q", 10, [top], []), "open_end")
    assert rec.answer == top.summary
