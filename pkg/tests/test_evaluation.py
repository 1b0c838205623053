from __future__ import annotations

import json
from types import SimpleNamespace

import pytest

from scrapmem.evaluation import (
    BenchmarkQuestion,
    EvalError,
    JudgeError,
    OfflineJudge,
    QuestionResult,
    RunResult,
    classify_failures,
    exact_match,
    failure_summary,
    failures_csv,
    jaccard,
    joint_at_k,
    load_questions,
    qs,
    recall_at_k,
    run_benchmark,
    to_list,
)
from scrapmem.synthetic import taxonomy_run_pair


def _q(qid="q1", qtype="number", answer="240 eur", evidence=("a",), question="How much?"):
    return BenchmarkQuestion(qid, question, qtype, answer, frozenset(evidence))


def test_exact_match_examples() -> None:
    assert exact_match("892.85 EUR", "892.85 EUR") == 1
    assert exact_match("892.85 EUR", "500.00 Euros") == 0
    assert exact_match("1,000", "1000") == 1
    assert exact_match("$12", "12.0") == 1
    assert exact_match(" Lisbon ", "lisbon") == 1


def test_to_list_examples() -> None:
    assert to_list("a, b, c") == {"a", "b", "c"}
    assert to_list("") == set()
    assert to_list("B; b,\nC") == {"b", "c"}


def test_jaccard_examples(caplog) -> None:
    assert jaccard("a, b", "b, a") == 1.0
    assert jaccard("a, b", "c, d") == 0.0
    assert jaccard("a, b, c", "b, c, d") == 0.5
    assert jaccard("", "") == 1.0
    assert "empty" in caplog.text


def test_recall_examples() -> None:
    assert recall_at_k({"p1", "p2"}, {"p1", "p2", "x"}) == 1.0
    assert recall_at_k({"p1", "p2"}, ["p2", "x", "y"]) == 0.5
    assert recall_at_k({"p1"}, ["x"]) == 0.0
    with pytest.raises(EvalError, match="unscorable question"):
        recall_at_k(set(), ["x"])


def test_joint_examples() -> None:
    assert joint_at_k(1.0, 1.0) == 1.0
    assert joint_at_k(0.7, 0.0) == 0.0
    assert joint_at_k(0.5, 0.8) == pytest.approx(0.4)
    with pytest.raises(EvalError):
        joint_at_k(1.5, 0.5)


def test_qs_dispatch() -> None:
    judge_calls = []

    def judge(q, a, p):
        judge_calls.append(1)
        return 1.0

    assert qs(_q(answer="240 EUR"), "240 eur", judge) == 1.0
    assert qs(_q(qtype="list_recall", answer="a, b, c"), "b, c, d", judge) == 0.5
    assert judge_calls == []
    assert qs(_q(qtype="open_end", answer="the blue bike"), "the blue bike", OfflineJudge()) == 1.0
    assert qs(_q(qtype="open_end", answer="the blue bike"), "a red car", OfflineJudge()) == 0.0


def test_unknown_type_rejected() -> None:
    with pytest.raises(EvalError):
        _q(qtype="essay")


def test_load_questions(tmp_path) -> None:
    path = tmp_path / "q.jsonl"
    path.write_text(
        json.dumps({"qid": "1", "question": "x?", "type": "number", "answer": "3", "evidence": ["a"], "asked_date": "2023-01-01"}) + "\n"
    )
    (q,) = load_questions(path)
    assert q.evidence == frozenset({"a"}) and q.asked_date.isoformat() == "2023-01-01"
    path.write_text('{"qid": "1"}\n')
    with pytest.raises(EvalError, match="line 1"):
        load_questions(path)


def _fixed_run(outcomes):
    """outcomes: {qid: (prediction, retrieved ids)}"""

    def retrieve(question, k):
        return SimpleNamespace(item_ids=outcomes[question][1])

    def answer(q, evidence):
        return outcomes[q.question][0]

    return retrieve, answer


def test_run_benchmark_empty() -> None:
    run = run_benchmark([], lambda q, k: None, lambda q, e: "", OfflineJudge())
    agg = run.aggregates()
    assert agg["count"] == 0 and agg["qs"] is None and agg["recall_at_10"] is None and agg["joint_at_10"] is None


def test_run_benchmark_means() -> None:
    questions = [
        _q("q1", answer="1", evidence=("a",), question="first"),
        _q("q2", answer="2", evidence=("b", "c"), question="second"),
    ]
    retrieve, answer = _fixed_run({"first": ("1", ["a"]), "second": ("9", ["b", "x"])})
    agg = run_benchmark(questions, retrieve, answer, OfflineJudge()).aggregates()
    assert agg["qs"] == 0.5 and agg["recall_at_10"] == 0.75 and agg["joint_at_10"] == 0.5
    assert agg["per_type"] == {"N": 0.5, "R": None, "O": None}


def test_run_benchmark_truncates_to_k() -> None:
    questions = [_q("q1", answer="1", evidence=("z",), question="first")]
    retrieve, answer = _fixed_run({"first": ("1", ["a", "b", "c", "z"])})
    run = run_benchmark(questions, retrieve, answer, OfflineJudge(), k=3)
    assert run.questions[0].recall_at_k == 0.0 and run.questions[0].retrieved == ["a", "b", "c"]


def test_run_benchmark_page_granularity() -> None:
    questions = [_q("q1", answer="1", evidence=("a2",), question="first")]
    retrieve, answer = _fixed_run({"first": ("1", ["a1"])})
    run = run_benchmark(questions, retrieve, answer, OfflineJudge(), page_of={"a1": "pa", "a2": "pa"})
    assert run.questions[0].recall_at_k == 1.0


def test_provider_failure_recorded_and_run_continues() -> None:
    questions = [_q("q1", question="boom"), _q("q2", answer="1", question="ok")]

    def retrieve(question, k):
        if question == "boom":
            raise RuntimeError("provider down")
        return SimpleNamespace(item_ids=["a"])

    run = run_benchmark(questions, retrieve, lambda q, e: "1", OfflineJudge())
    assert run.questions[0].error == "provider down" and run.questions[0].qs is None
    assert run.aggregates()["qs"] == 1.0 and run.aggregates()["scored"] == 1


def test_judge_failure_leaves_question_unscored() -> None:
    def judge(q, a, p):
        raise JudgeError("timeout")

    questions = [_q("q1", qtype="open_end", answer="x", question="first")]
    retrieve, answer = _fixed_run({"first": ("x", ["a"])})
    run = run_benchmark(questions, retrieve, answer, judge)
    assert run.questions[0].qs is None and run.questions[0].recall_at_k == 1.0
    assert run.aggregates()["qs"] is None


def test_concurrent_run_matches_serial() -> None:
    questions = [_q(f"q{i}", answer=str(i), evidence=(f"e{i}",), question=f"n{i}") for i in range(20)]
    outcomes = {f"n{i}": (str(i if i % 3 else i + 1), [f"e{i}"] if i % 2 else ["x"]) for i in range(20)}
    retrieve, answer = _fixed_run(outcomes)
    serial = run_benchmark(questions, retrieve, answer, OfflineJudge())
    parallel = run_benchmark(questions, retrieve, answer, OfflineJudge(), max_inflight=4)
    assert serial.to_json() == parallel.to_json()


def test_run_result_round_trip() -> None:
    run = RunResult(10, [QuestionResult("q", "number", "1", ["a"], 1.0, 1.0, 1.0)])
    assert RunResult.from_json(json.loads(json.dumps(run.to_json()))).to_json() == run.to_json()


# -- taxonomy ------------------------------------------------------------------------


def _single(recall, qs_ours, qs_base):
    ours = RunResult(10, [QuestionResult("c", "number", "x", [], qs_ours, recall, qs_ours * recall)])
    base = RunResult(10, [QuestionResult("c", "number", "x", [], qs_base, recall, qs_base * recall)])
    return classify_failures(ours, base)


def test_case_rules() -> None:
    assert _single(0.0, 0.0, 0.0)[0].label == "em_graph"
    assert _single(1.0, 0.0, 1.0)[0].label == "optical_forgetting"
    assert _single(1.0, 0.0, 0.0)[0].label == "llm_reasoning"
    assert _single(0.5, 0.0, 1.0)[0].label == "em_graph"
    assert _single(1.0, 1.0, 0.0) == []


def test_partial_list_score_counts_as_incorrect() -> None:
    assert _single(1.0, 0.5, 1.0)[0].label == "optical_forgetting"


def test_taxonomy_shares() -> None:
    ours, base = taxonomy_run_pair(333, 68, 167, correct=50)
    summary = failure_summary(classify_failures(ours, base))
    assert summary["incorrect"] == 568
    assert summary["counts"] == {"em_graph": 333, "optical_forgetting": 68, "llm_reasoning": 167}
    shares = {k: round(v * 100, 1) for k, v in summary["shares"].items()}
    assert shares == {"em_graph": 58.6, "optical_forgetting": 12.0, "llm_reasoning": 29.4}


def test_qid_mismatch_rejected() -> None:
    ours, base = taxonomy_run_pair(1, 1, 1)
    base.questions.pop()
    with pytest.raises(EvalError):
        classify_failures(ours, base)


def test_failures_csv() -> None:
    ours, base = taxonomy_run_pair(1, 0, 1)
    assert failures_csv(classify_failures(ours, base)) == "qid,label\nt00000,em_graph\nt00001,llm_reasoning\n"
