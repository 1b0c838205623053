"""Benchmark metrics, runner and failure taxonomy."""
from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set

from .chat import ChatClient, ProviderError, parse_json_reply

logger = logging.getLogger(__name__)

QTYPES = ("number", "list_recall", "open_end")
LABELS = ("em_graph", "optical_forgetting", "llm_reasoning")
_TYPE_KEYS = {"number": "N", "list_recall": "R", "open_end": "O"}


class EvalError(ValueError):
    pass


class JudgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchmarkQuestion:
    qid: str
    question: str
    qtype: str
    answer: str
    evidence: frozenset
    asked_date: Optional[date] = None

    def __post_init__(self) -> None:
        if self.qtype not in QTYPES:
            raise EvalError(f"{self.qid}: unknown question type {self.qtype!r}")


def load_questions(path: Path) -> List[BenchmarkQuestion]:
    questions = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                asked = rec.get("asked_date")
                questions.append(
                    BenchmarkQuestion(
                        qid=str(rec["qid"]),
                        question=str(rec["question"]),
                        qtype=str(rec["type"]),
                        answer=str(rec["answer"]),
                        evidence=frozenset(str(e) for e in rec.get("evidence", [])),
                        asked_date=date.fromisoformat(asked) if asked else None,
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise EvalError(f"line {lineno}: {exc}") from exc
    return questions


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

_CURRENCY = re.compile(r"[$€£¥₹₩]")
_THOUSANDS = re.compile(r"(?<=\d)[,_ ](?=\d{3}(?!\d))")


def normalize_answer(value: str) -> str:
    text = _CURRENCY.sub("", value.strip().lower())
    text = _THOUSANDS.sub("", text)
    return " ".join(text.split())


def _as_number(text: str) -> Optional[float]:
    try:
        return float(text)
    except ValueError:
        return None


def exact_match(a: str, pred: str) -> int:
    na, npred = normalize_answer(a), normalize_answer(pred)
    xa, xp = _as_number(na), _as_number(npred)
    if xa is not None and xp is not None:
        return int(xa == xp)
    return int(na == npred)


def to_list(s: str) -> Set[str]:
    return {part.strip().lower() for part in re.split(r"[,;\n]", s) if part.strip()}


def jaccard(a: str, pred: str) -> float:
    la, lp = to_list(a), to_list(pred)
    union = la | lp
    if not union:
        logger.warning("jaccard on two empty lists; scoring 1.0 by convention")
        return 1.0
    return len(la & lp) / len(union)


def recall_at_k(evidence: Iterable[str], retrieved: Iterable[str]) -> float:
    truth = set(evidence)
    if not truth:
        raise EvalError("unscorable question: empty evidence set")
    return len(truth & set(retrieved)) / len(truth)


def joint_at_k(qs_val: float, recall_val: float) -> float:
    if not (0.0 <= qs_val <= 1.0 and 0.0 <= recall_val <= 1.0):
        raise EvalError("joint_at_k inputs must lie in [0, 1]")
    return qs_val * recall_val


def _tokens(text: str) -> List[str]:
    return re.findall(r"[a-z0-9]+", normalize_answer(text))


def token_f1(a: str, pred: str) -> float:
    ta, tp = _tokens(a), _tokens(pred)
    if not ta and not tp:
        return 1.0
    common = sum((Counter(ta) & Counter(tp)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(tp), common / len(ta)
    return 2 * precision * recall / (precision + recall)


class OfflineJudge:
    mode = "offline"

    def __init__(self, threshold: float = 0.5) -> None:
        self.threshold = threshold

    def __call__(self, question: str, answer: str, pred: str) -> float:
        return 1.0 if token_f1(answer, pred) >= self.threshold else 0.0


@dataclass
class RemoteJudge:
    client: ChatClient = field(default_factory=ChatClient)
    mode: str = "remote"

    def __call__(self, question: str, answer: str, pred: str) -> float:
        messages = [
            {
                "role": "system",
                "content": 'You grade answers. Reply with a JSON object {"correct": true|false} stating whether '
                "the prediction conveys the ground-truth answer to the question.",
            },
            {"role": "user", "content": f"Question: {question}\nGround truth: {answer}\nPrediction: {pred}"},
        ]
        try:
            reply = self.client.complete(messages, max_tokens=16, temperature=0.0)
            verdict = parse_json_reply(reply, ("correct",))["correct"]
        except ProviderError as exc:
            raise JudgeError(str(exc)) from exc
        if not isinstance(verdict, bool):
            raise JudgeError(f"non-boolean verdict {verdict!r}")
        return 1.0 if verdict else 0.0


Judge = Callable[[str, str, str], float]


def qs(question: BenchmarkQuestion, pred: str, judge: Judge) -> float:
    if question.qtype == "number":
        return float(exact_match(question.answer, pred))
    if question.qtype == "list_recall":
        return jaccard(question.answer, pred)
    return float(judge(question.question, question.answer, pred))


def is_incorrect(score: Optional[float]) -> bool:
    return score is not None and score < 1.0


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


@dataclass
class QuestionResult:
    qid: str
    qtype: str
    prediction: Optional[str]
    retrieved: List[str]
    qs: Optional[float]
    recall_at_k: Optional[float]
    joint_at_k: Optional[float]
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "qid": self.qid,
            "qtype": self.qtype,
            "prediction": self.prediction,
            "retrieved": list(self.retrieved),
            "qs": self.qs,
            "recall_at_k": self.recall_at_k,
            "joint_at_k": self.joint_at_k,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "QuestionResult":
        return cls(
            data["qid"], data["qtype"], data.get("prediction"), list(data.get("retrieved", [])),
            data.get("qs"), data.get("recall_at_k"), data.get("joint_at_k"), data.get("error"),
        )


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass
class RunResult:
    k: int
    questions: List[QuestionResult]

    @property
    def by_qid(self) -> Dict[str, QuestionResult]:
        return {q.qid: q for q in self.questions}

    def aggregates(self) -> dict:
        per_type = {
            key: _mean([q.qs for q in self.questions if q.qtype == qtype]) for qtype, key in _TYPE_KEYS.items()
        }
        return {
            "count": len(self.questions),
            "scored": sum(1 for q in self.questions if q.qs is not None),
            "qs": _mean([q.qs for q in self.questions]),
            f"recall_at_{self.k}": _mean([q.recall_at_k for q in self.questions]),
            f"joint_at_{self.k}": _mean([q.joint_at_k for q in self.questions]),
            "per_type": per_type,
        }

    def to_json(self) -> dict:
        return {"k": self.k, "aggregates": self.aggregates(), "questions": [q.to_json() for q in self.questions]}

    @classmethod
    def from_json(cls, data: Mapping) -> "RunResult":
        return cls(int(data["k"]), [QuestionResult.from_json(q) for q in data["questions"]])


def run_benchmark(
    questions: Sequence[BenchmarkQuestion],
    retrieve: Callable[[str, int], "object"],
    answer: Callable[[BenchmarkQuestion, "object"], str],
    judge: Judge,
    k: int = 10,
    *,
    max_inflight: int = 1,
    page_of: Optional[Mapping[str, str]] = None,
) -> RunResult:
    """Retrieve, answer and score every question.

    ``retrieve(question, k)`` returns an object with ``item_ids``;
    ``answer(question, evidence)`` returns the prediction text. With
    ``page_of`` (item id -> page id) recall is scored at page granularity.
    """
    if k < 1:
        raise EvalError("k must be >= 1")

    def one(q: BenchmarkQuestion) -> QuestionResult:
        try:
            evidence = retrieve(q.question, k)
            pred = answer(q, evidence)
        except Exception as exc:  # provider failures are recorded, the run continues
            logger.warning("%s: %s", q.qid, exc)
            return QuestionResult(q.qid, q.qtype, None, [], None, None, None, error=str(exc))
        retrieved = list(getattr(evidence, "item_ids", []))
        if page_of is not None:
            truth = {page_of.get(e, e) for e in q.evidence}
            got = list(dict.fromkeys(page_of.get(i, i) for i in retrieved))[:k]
        else:
            truth, got = set(q.evidence), retrieved[:k]
        recall = recall_at_k(truth, got) if truth else None
        try:
            score: Optional[float] = qs(q, pred, judge)
        except JudgeError as exc:
            logger.warning("%s: judge failed, question left unscored: %s", q.qid, exc)
            score = None
        joint = joint_at_k(score, recall) if score is not None and recall is not None else None
        return QuestionResult(q.qid, q.qtype, pred, got, score, recall, joint)

    if max_inflight > 1:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            results = list(pool.map(one, questions))
    else:
        results = [one(q) for q in questions]
    return RunResult(k, results)


# ---------------------------------------------------------------------------
# Failure taxonomy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FailureLabel:
    qid: str
    label: str


def classify_failures(run: RunResult, baseline: RunResult) -> List[FailureLabel]:
    """Label each strictly incorrect answer of ``run`` against ``baseline``.

    Recall below 1 points at retrieval; with full recall, a correct baseline
    points at degradation and an incorrect one at the answerer.
    """
    ours, theirs = run.by_qid, baseline.by_qid
    if set(ours) != set(theirs):
        raise EvalError("runs cover different qids: " + ", ".join(sorted(set(ours) ^ set(theirs))))
    labels = []
    for q in run.questions:
        if not is_incorrect(q.qs):
            continue
        base = theirs[q.qid]
        if q.recall_at_k is None or q.recall_at_k < 1.0:
            label = "em_graph"
        elif base.qs is not None and base.qs >= 1.0:
            label = "optical_forgetting"
        else:
            label = "llm_reasoning"
        labels.append(FailureLabel(q.qid, label))
    return labels


def failure_summary(labels: Sequence[FailureLabel]) -> dict:
    counts = Counter(l.label for l in labels)
    total = len(labels)
    return {
        "incorrect": total,
        "counts": {name: counts.get(name, 0) for name in LABELS},
        "shares": {name: (counts.get(name, 0) / total if total else None) for name in LABELS},
    }


def failures_csv(labels: Sequence[FailureLabel]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["qid", "label"])
    for l in labels:
        writer.writerow([l.qid, l.label])
    return buf.getvalue()
