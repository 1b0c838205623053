"""Command-line entry point: ``scrapmem <command> ...``.

Every command prints JSON on stdout and diagnostics on stderr. Exit codes:
0 success, 1 other failure, 2 invalid input, 3 provider failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path
from typing import List, Optional

from .chat import ChatClient, ProviderError
from .config import ConfigError, EngineConfig, load_config
from .corpus import CorpusError, KeyframeError, ingest
from .emgraph import GraphError
from .embedding import EmbeddingError
from .evaluation import (
    EvalError,
    OfflineJudge,
    RemoteJudge,
    RunResult,
    classify_failures,
    failure_summary,
    failures_csv,
    load_questions,
    run_benchmark,
)
from .forgetting import DegradeError
from .pagebuilder import PageError
from .perception import NoExtractableNodes, PerceptionError
from .policy import PolicyError, load_policy
from .retrieval import MockAnswerer, RemoteAnswerer
from .store import MemoryStore, StoreError
from . import synthetic

logger = logging.getLogger("scrapmem")

EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_PROVIDER = 3

_INVALID = (CorpusError, ConfigError, PolicyError, EvalError, GraphError, PageError, NoExtractableNodes, EmbeddingError, ValueError)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID) -> None:
        super().__init__(message)
        self.code = code


def _emit(args: argparse.Namespace, payload: object) -> None:
    if args.json:
        sys.stdout.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
    else:
        sys.stdout.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _config(args: argparse.Namespace) -> EngineConfig:
    config = load_config(args.config)
    overrides = {}
    if getattr(args, "k", None) is not None:
        overrides["k"] = args.k
    if getattr(args, "day_budget", None) is not None:
        overrides["day_budget"] = None if args.day_budget == 0 else args.day_budget
    if overrides:
        data = config.to_json()
        data.update(overrides)
        config = EngineConfig.from_json(data)
    return config


def _store(args: argparse.Namespace) -> MemoryStore:
    if not args.store:
        raise CliError("--store is required")
    return MemoryStore(Path(args.store))


def _manifest(path: Path) -> Path:
    return path / "manifest.jsonl" if path.is_dir() else path


def _answerer(config: EngineConfig):
    if config.answer == "remote":
        return RemoteAnswerer(ChatClient())
    return MockAnswerer()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    manifest = _manifest(Path(args.corpus))
    corpus = ingest(manifest)
    MemoryStore.create(_store(args).root, corpus)
    _say(f"{len(corpus.items)} items, {len(corpus.by_day)} days")
    _emit(args, {"items": len(corpus.items), "days": len(corpus.by_day), "counts": corpus.counts()})
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    config = _config(args)
    result = _store(args).build(config)
    _say(f"{result.pages_processed} pages processed")
    _emit(args, result.to_json())
    return 0


def cmd_forget(args: argparse.Namespace) -> int:
    config = _config(args)
    policy = load_policy(args.policy or config.policy)
    now = date.fromisoformat(args.now) if args.now else date.today()
    result = _store(args).forget(policy, now, config)
    counts = ", ".join(f"{k} {v}" for k, v in result.stage_counts.items())
    _say(f"{result.pages_changed} pages changed ({counts}); {result.lost_mentions} mentions lost, {result.pruned_paths} paths pruned")
    _emit(args, result.to_json())
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    config = _config(args)
    store = _store(args)
    evidence = store.retriever(config).retrieve(args.question, store.memory_view(config), config.k)
    _emit(args, evidence.to_json())
    return 0


def cmd_answer(args: argparse.Namespace) -> int:
    config = _config(args)
    store = _store(args)
    view = store.memory_view(config)
    evidence = store.retriever(config).retrieve(args.question, view, config.k)
    answerer = _answerer(config)
    if isinstance(answerer, RemoteAnswerer):
        record = answerer.answer(args.question, evidence, args.type, view.fused_text)
    else:
        record = answerer.answer(args.question, evidence, args.type)
    _emit(args, record.to_json())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    store = _store(args)
    questions = load_questions(Path(args.questions))
    view = store.memory_view(config)
    retriever = store.retriever(config)
    answerer = _answerer(config)
    judge = RemoteJudge(ChatClient()) if config.judge == "remote" else OfflineJudge()

    def answer(q, evidence) -> str:
        if config.answer == "oracle":
            return q.answer
        if isinstance(answerer, RemoteAnswerer):
            return answerer.answer(q.question, evidence, q.qtype, view.fused_text).answer
        return answerer.answer(q.question, evidence, q.qtype).answer

    run = run_benchmark(
        questions,
        lambda question, k: retriever.retrieve(question, view, k),
        answer,
        judge,
        config.k,
        max_inflight=config.max_inflight,
        page_of=store.page_of_items() if args.granularity == "page" else None,
    )
    report = run.to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    agg = report["aggregates"]
    _say(f"{agg['count']} questions; QS {agg['qs']}, R@{config.k} {agg[f'recall_at_{config.k}']}, Joint@{config.k} {agg[f'joint_at_{config.k}']}")
    _emit(args, report if args.full else agg)
    return 0


def cmd_storage(args: argparse.Namespace) -> int:
    report = _store(args).storage(args.baseline_bytes)
    _emit(args, report.to_json())
    return 0


def _load_run(path: str) -> RunResult:
    try:
        return RunResult.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot read run report {path}: {exc}") from exc


def cmd_classify(args: argparse.Namespace) -> int:
    labels = classify_failures(_load_run(args.run), _load_run(args.baseline))
    if args.csv:
        Path(args.csv).write_text(failures_csv(labels), encoding="utf-8")
    summary = failure_summary(labels)
    shares = ", ".join(
        f"{name} {share * 100:.1f}%" for name, share in summary["shares"].items() if share is not None
    )
    _say(f"{summary['incorrect']} incorrect: {shares}")
    _emit(args, summary)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "corpus":
        days = synthetic.write_corpus(
            out, seed=args.seed, days=args.days, now=date.fromisoformat(args.now), first_age=args.first_age, spacing=args.spacing
        )
        synthetic.write_questions(out / "questions.jsonl", days)
        _emit(args, {"manifest": str(out / "manifest.jsonl"), "questions": str(out / "questions.jsonl"), "days": len(days)})
        return 0
    counts = [int(x) for x in args.counts.split(",")]
    if len(counts) != 3:
        raise CliError("--counts takes three comma-separated integers")
    ours, base = synthetic.taxonomy_run_pair(*counts, correct=args.correct)
    (out / "run.json").write_text(json.dumps(ours.to_json(), sort_keys=True) + "\n", encoding="utf-8")
    (out / "baseline.json").write_text(json.dumps(base.to_json(), sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, {"run": str(out / "run.json"), "baseline": str(out / "baseline.json"), "questions": len(ours.questions)})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--store", help="store directory")
    common.add_argument("--config", help="engine config JSON file")
    common.add_argument("--seed", type=int, default=0, help="seed for fixture generation")
    common.add_argument("--json", action="store_true", help="compact single-line JSON output")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="scrapmem", description="Scrapbook episodic memory engine", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a corpus manifest and create a store")
    p.add_argument("--corpus", required=True, help="corpus directory (with manifest.jsonl) or manifest file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", parents=[common], help="render pages and build the memory graph")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("forget", parents=[common], help="apply a forgetting policy")
    p.add_argument("--policy", help="preset name or policy JSON file")
    p.add_argument("--now", help="reference date YYYY-MM-DD (default: today)")
    p.set_defaults(func=cmd_forget)

    for name, func, helptext in (("query", cmd_query, "retrieve evidence"), ("answer", cmd_answer, "retrieve and answer")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--question", required=True)
        p.add_argument("--k", type=int)
        p.add_argument("--day-budget", type=int, help="days kept in stage one (0 = unlimited)")
        if name == "answer":
            p.add_argument("--type", choices=("number", "list_recall", "open_end"))
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="run a benchmark question file")
    p.add_argument("--questions", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--day-budget", type=int, help="days kept in stage one (0 = unlimited)")
    p.add_argument("--granularity", choices=("item", "page"), default="item")
    p.add_argument("--out", help="write the full run report here")
    p.add_argument("--full", action="store_true", help="print per-question records too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("storage", parents=[common], help="report store size against the raw corpus")
    p.add_argument("--baseline-bytes", type=int)
    p.set_defaults(func=cmd_storage)

    p = sub.add_parser("classify-failures", parents=[common], help="label incorrect answers against a baseline run")
    p.add_argument("--run", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--csv", help="write qid,label rows here")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("synth", parents=[common], help="generate seeded fixtures")
    p.add_argument("--kind", choices=("corpus", "taxonomy"), default="corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--now", default="2025-01-01")
    p.add_argument("--first-age", type=int, default=200)
    p.add_argument("--spacing", type=int, default=15)
    p.add_argument("--counts", default="333,68,167", help="em_graph,optical_forgetting,llm_reasoning")
    p.add_argument("--correct", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        _say(f"error: {exc}")
        return exc.code
    except ProviderError as exc:
        _say(f"provider error: {exc}")
        return EXIT_PROVIDER
    except _INVALID as exc:
        _say(f"error: {exc}")
        return EXIT_INVALID
    except (StoreError, KeyframeError, PerceptionError, DegradeError, OSError) as exc:
        _say(f"error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
