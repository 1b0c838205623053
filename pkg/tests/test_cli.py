from __future__ import annotations

import json
import shutil

import pytest

from conftest import write_manifest
from scrapmem.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth_store(tmp_path_factory):
    """A built store over a small seeded synthetic corpus."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    store = root / "store"
    assert main(["synth", "--out", str(corpus), "--days", "8", "--json"]) == 0
    assert main(["ingest", "--corpus", str(corpus), "--store", str(store), "--json"]) == 0
    assert main(["build", "--store", str(store), "--json"]) == 0
    return corpus, store


def test_ingest_empty_manifest(capsys, tmp_path) -> None:
    write_manifest(tmp_path / "c" / "manifest.jsonl", [])
    code, out, err = run(capsys, "ingest", "--corpus", tmp_path / "c", "--store", tmp_path / "s")
    assert code == 0 and "0 items" in err
    assert json.loads(out)["items"] == 0


def test_ingest_duplicate_id_exits_2(capsys, tmp_path) -> None:
    rec = {"id": "a", "kind": "text", "timestamp": "2023-01-01T00:00:00Z", "payload": "x"}
    write_manifest(tmp_path / "c" / "manifest.jsonl", [rec, rec])
    code, _, err = run(capsys, "ingest", "--corpus", tmp_path / "c", "--store", tmp_path / "s")
    assert code == 2 and "line 2" in err


def test_ingest_fixture(capsys, tmp_path, fixture_corpus) -> None:
    code, out, err = run(capsys, "ingest", "--corpus", fixture_corpus, "--store", tmp_path / "s", "--json")
    assert code == 0 and "12 items, 5 days" in err
    counts = json.loads(out)["counts"]
    assert (counts["text"], counts["image"], counts["video"]) == (8, 4, 0)


def test_build_requires_ingest(capsys, tmp_path) -> None:
    code, _, err = run(capsys, "build", "--store", tmp_path / "nothing")
    assert code == 1 and "ingest" in err


def test_missing_store_flag(capsys) -> None:
    code, _, err = run(capsys, "build")
    assert code == 2 and "--store" in err


def test_rebuild_processes_nothing(capsys, synth_store) -> None:
    _, store = synth_store
    code, out, err = run(capsys, "build", "--store", store, "--json")
    assert code == 0 and "0 pages processed" in err
    assert json.loads(out)["pages_processed"] == 0


def test_unknown_policy_exits_2(capsys, synth_store) -> None:
    _, store = synth_store
    code, _, err = run(capsys, "forget", "--store", store, "--policy", "gentle", "--now", "2025-01-01")
    assert code == 2 and "timed-gentle" in err


def test_query_and_answer(capsys, synth_store) -> None:
    corpus, store = synth_store
    first = json.loads((corpus / "questions.jsonl").read_text().splitlines()[0])
    code, out, _ = run(capsys, "query", "--store", store, "--question", first["question"], "--json")
    assert code == 0
    report = json.loads(out)
    assert first["evidence"][0] in report["item_ids"]
    code, out, _ = run(capsys, "answer", "--store", store, "--question", first["question"], "--type", "number", "--json")
    assert code == 0 and json.loads(out)["answer"]


def test_query_of_stop_words_exits_2(capsys, synth_store) -> None:
    _, store = synth_store
    code, _, err = run(capsys, "query", "--store", store, "--question", "what did I do?")
    assert code == 2 and "no extractable nodes" in err


def test_eval_with_oracle_answers(capsys, synth_store, tmp_path) -> None:
    corpus, store = synth_store
    config = tmp_path / "oracle.json"
    config.write_text(json.dumps({"answer": "oracle"}))
    code, out, err = run(capsys, "eval", "--store", store, "--config", config, "--questions", corpus / "questions.jsonl", "--json")
    agg = json.loads(out)
    assert code == 0 and agg["count"] == 8
    assert agg["qs"] == 1.0 and agg["recall_at_10"] == 1.0 and agg["joint_at_10"] == 1.0


def test_eval_output_is_bit_identical(capsys, synth_store, tmp_path) -> None:
    corpus, store = synth_store
    outputs = []
    for name in ("a.json", "b.json"):
        code, out, _ = run(capsys, "eval", "--store", store, "--questions", corpus / "questions.jsonl", "--out", tmp_path / name, "--json")
        assert code == 0
        outputs.append((out, (tmp_path / name).read_bytes()))
    assert outputs[0] == outputs[1]


def test_stronger_policy_saves_more(capsys, synth_store, tmp_path) -> None:
    _, store = synth_store
    totals = {}
    for policy in ("very_soft", "timed-gentle"):
        copy = tmp_path / policy
        shutil.copytree(store, copy)
        code, _, err = run(capsys, "forget", "--store", copy, "--policy", policy, "--now", "2025-01-01")
        assert code == 0 and "pages changed" in err
        code, out, _ = run(capsys, "storage", "--store", copy, "--json")
        totals[policy] = json.loads(out)
    assert totals["timed-gentle"]["total_bytes"] < totals["very_soft"]["total_bytes"]
    assert totals["timed-gentle"]["saving_fraction"] > totals["very_soft"]["saving_fraction"]


def test_classify_failures_shares(capsys, tmp_path) -> None:
    code, _, _ = run(capsys, "synth", "--kind", "taxonomy", "--out", tmp_path, "--counts", "333,68,167", "--json")
    assert code == 0
    code, out, err = run(capsys, "classify-failures", "--run", tmp_path / "run.json", "--baseline", tmp_path / "baseline.json", "--csv", tmp_path / "f.csv", "--json")
    assert code == 0
    shares = {k: round(v * 100, 1) for k, v in json.loads(out)["shares"].items()}
    assert shares == {"em_graph": 58.6, "optical_forgetting": 12.0, "llm_reasoning": 29.4}
    assert "58.6%" in err
    assert len((tmp_path / "f.csv").read_text().splitlines()) == 569


def test_classify_failures_bad_report(capsys, tmp_path) -> None:
    (tmp_path / "x.json").write_text("{")
    code, _, err = run(capsys, "classify-failures", "--run", tmp_path / "x.json", "--baseline", tmp_path / "x.json")
    assert code == 2 and "cannot read" in err
