"""On-disk memory store: build pipeline, forget pass, snapshots and storage accounting.

Layout of a store directory::

    store.json              corpus root and creation settings
    corpus.jsonl            canonical copy of the ingested manifest
    pages/                  <page_id>.jpg + <page_id>.json sidecars
    perception/             <page_id>.json perception results from build time
    graph.json              the EM graph
    build_journal.jsonl     page ids committed by build
    forget_journal.jsonl    one record per committed page degradation
    .lock                   writer lock
"""
from __future__ import annotations

import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from filelock import FileLock, Timeout
from PIL import Image

from .chat import ChatClient
from .config import EngineConfig
from .corpus import Corpus, ingest, video_keyframes
from .embedding import RemoteEmbedder, TrigramEmbedder
from .emgraph import EMGraph
from .forgetting import StorageReport, degrade_page, fade_nodes, prune_graph, storage_report
from .pagebuilder import PageStore, ScrapbookPage, consolidate, decode_raster, page_id_for
from .perception import MockPerceiver, PathSummary, PerceptionResult, RemotePerceiver, fuse_text
from .policy import STAGES, ForgettingPolicy
from .retrieval import MemoryView, PageInfo, Retriever

logger = logging.getLogger(__name__)

PENDING = ".pending"
VISUAL_GRID = 8


class StoreError(RuntimeError):
    pass


class StoreLocked(StoreError):
    pass


def providers(config: EngineConfig, client: Optional[ChatClient] = None):
    """Perceiver and embedder for the configured modes."""
    needs_client = "remote" in (config.perception, config.embedding)
    if needs_client and client is None:
        client = ChatClient()
    perceiver = RemotePerceiver(client) if config.perception == "remote" else MockPerceiver()
    embedder = RemoteEmbedder(client) if config.embedding == "remote" else TrigramEmbedder(config.embedding_dim)
    return perceiver, embedder


def visual_embedding(img: Image.Image) -> Optional[np.ndarray]:
    """8x8 grayscale thumbnail, mean-centered and L2-normalized; None for flat tiles."""
    thumb = np.asarray(img.convert("L").resize((VISUAL_GRID, VISUAL_GRID), Image.BILINEAR), dtype=np.float64).ravel()
    thumb -= thumb.mean()
    norm = float(np.linalg.norm(thumb))
    return thumb / norm if norm > 1e-9 else None


def raw_corpus_bytes(corpus: Corpus) -> int:
    """Size of the raw records: inline text payloads plus media files."""
    total = 0
    for item in corpus.items:
        if item.kind == "text":
            total += len(item.payload.encode("utf-8"))
        else:
            total += corpus.media_path(item).stat().st_size
    return total


@dataclass
class BuildResult:
    pages_processed: int
    paths_added: int
    nodes: int
    paths: int

    def to_json(self) -> dict:
        return {"pages_processed": self.pages_processed, "paths_added": self.paths_added, "nodes": self.nodes, "paths": self.paths}


@dataclass
class ForgetResult:
    policy: str
    now: date
    pages_changed: int = 0
    stage_counts: Dict[str, int] = field(default_factory=dict)
    lost_mentions: int = 0
    pruned_paths: int = 0
    removed_nodes: int = 0
    storage: Optional[StorageReport] = None

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "now": self.now.isoformat(),
            "pages_changed": self.pages_changed,
            "stage_counts": dict(self.stage_counts),
            "lost_mentions": self.lost_mentions,
            "pruned_paths": self.pruned_paths,
            "removed_nodes": self.removed_nodes,
            "storage": self.storage.to_json() if self.storage else None,
        }


def _append_jsonl(path: Path, record: dict) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _read_jsonl(path: Path) -> List[dict]:
    if not path.is_file():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning("%s: skipping torn journal line", path.name)
    return records


class MemoryStore:
    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.pages = PageStore(self.root / "pages")

    # -- paths ---------------------------------------------------------------

    @property
    def graph_path(self) -> Path:
        return self.root / "graph.json"

    @property
    def build_journal(self) -> Path:
        return self.root / "build_journal.jsonl"

    @property
    def forget_journal(self) -> Path:
        return self.root / "forget_journal.jsonl"

    def perception_path(self, page_id: str) -> Path:
        return self.root / "perception" / f"{page_id}.json"

    def lock(self) -> FileLock:
        return FileLock(str(self.root / ".lock"), timeout=0)

    def _writer(self):
        lock = self.lock()
        try:
            lock.acquire()
        except Timeout as exc:
            raise StoreLocked(f"store {self.root} is locked by another writer") from exc
        return lock

    # -- corpus --------------------------------------------------------------

    @classmethod
    def create(cls, root: Path, corpus: Corpus) -> "MemoryStore":
        store = cls(root)
        store.root.mkdir(parents=True, exist_ok=True)
        lock = store._writer()
        try:
            corpus.save(store.root / "corpus.jsonl")
            meta = {"corpus_root": str(corpus.root), "items": len(corpus.items), "days": len(corpus.by_day)}
            (store.root / "store.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        finally:
            lock.release()
        return store

    def corpus(self) -> Corpus:
        meta_path = self.root / "store.json"
        if not meta_path.is_file():
            raise StoreError(f"{self.root} is not an ingested store (run ingest first)")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        corpus = ingest(self.root / "corpus.jsonl", check_media=False)
        return replace(corpus, root=Path(meta["corpus_root"]))

    def baseline_bytes(self) -> int:
        return raw_corpus_bytes(self.corpus())

    # -- graph ---------------------------------------------------------------

    def load_graph(self, config: Optional[EngineConfig] = None) -> EMGraph:
        expected = config.graph_hash() if config is not None else None
        if not self.graph_path.is_file():
            tau = config.tau_merge if config is not None else 0.90
            return EMGraph(tau=tau, config_hash=expected or "")
        return EMGraph.load(self.graph_path, expected_hash=expected)

    # -- build ---------------------------------------------------------------

    def _render_and_perceive(
        self, corpus: Corpus, day: date, config: EngineConfig, perceiver
    ) -> Tuple[ScrapbookPage, PerceptionResult, PathSummary]:
        items = corpus.day_items(day)
        frames = {it.id: video_keyframes(it, config.keyframes, root=corpus.root) for it in items if it.kind == "video"}
        page = consolidate(day, items, config.layout, frames=frames, root=corpus.root)
        perception = perceiver.perceive_page(page)
        summary = perceiver.summarize_path(perception, day)
        return page, perception, summary

    def build(self, config: EngineConfig, *, perceiver=None, embedder=None) -> BuildResult:
        """Consolidate, perceive and index every day not yet committed.

        Rendering and perception run concurrently (up to ``max_inflight``);
        graph mutation and commits are serialized in date order. A page is
        committed once its graph update is persisted and journaled, so an
        interrupted build resumes at the first uncommitted day.
        """
        if perceiver is None or embedder is None:
            default_perceiver, default_embedder = providers(config)
            perceiver = perceiver or default_perceiver
            embedder = embedder or default_embedder
        lock = self._writer()
        try:
            corpus = self.corpus()
            graph = self.load_graph(config)
            done = {rec["page_id"] for rec in _read_jsonl(self.build_journal)}
            done |= {p.page_id for p in graph.paths.values()}
            todo = [d for d in sorted(corpus.by_day) if page_id_for(d) not in done]
            paths_added = 0

            def work(day: date):
                return self._render_and_perceive(corpus, day, config, perceiver)

            with ThreadPoolExecutor(max_workers=config.max_inflight) as pool:
                for page, perception, summary in pool.map(work, todo):
                    paths_added += self._commit_page(graph, page, perception, summary, embedder)
            return BuildResult(len(todo), paths_added, len(graph.nodes), len(graph.paths))
        finally:
            lock.release()

    def _commit_page(self, graph: EMGraph, page: ScrapbookPage, perception: PerceptionResult, summary: PathSummary, embedder) -> int:
        self.pages.write(page)
        ppath = self.perception_path(page.page_id)
        ppath.parent.mkdir(parents=True, exist_ok=True)
        record = perception.to_json()
        record["em_path"] = summary.em_path
        ppath.write_text(json.dumps(record, sort_keys=True, indent=1), encoding="utf-8")

        added = 0
        phrases = [p for p, _ in summary.semantic_nodes]
        if phrases:
            embeddings = embedder.embed_many(phrases)
            node_ids = [
                graph.merge_or_insert(phrase, emb, page.page_id, sal)
                for (phrase, sal), emb in zip(summary.semantic_nodes, embeddings)
            ]
            graph.add_path(page.page_id, page.date, node_ids, summary.em_path)
            added = 1
        img = decode_raster(page.raster)
        for item_id, box in page.layout:
            if item_id in page.texts:
                continue
            emb = visual_embedding(img.crop(box))
            if emb is not None:
                graph.add_visual_node(page.page_id, box, emb)
        graph.persist(self.graph_path)
        _append_jsonl(self.build_journal, {"page_id": page.page_id, "paths_added": added})
        logger.info("built %s (%d items, %d nodes on path)", page.page_id, len(page.source_ids), len(phrases))
        return added

    # -- forget --------------------------------------------------------------

    def _recover(self) -> None:
        """Roll a half-committed forget step forward or back."""
        pending = sorted(self.pages.directory.glob(f"*.json{PENDING}")) if self.pages.directory.is_dir() else []
        journaled = {(r["page_id"], r["to_stage"]) for r in _read_jsonl(self.forget_journal)}
        graph_pending = self.graph_path.with_name(self.graph_path.name + PENDING)
        for sidecar in pending:
            page_id = sidecar.name[: -len(".json" + PENDING)]
            stage = json.loads(sidecar.read_text(encoding="utf-8"))["fidelity"]["stage"]
            raster = self.pages.raster_path(page_id).with_name(f"{page_id}.jpg{PENDING}")
            if (page_id, stage) in journaled and raster.is_file():
                logger.warning("%s: completing interrupted forget commit", page_id)
                raster.replace(self.pages.raster_path(page_id))
                sidecar.replace(self.pages.sidecar_path(page_id))
                if graph_pending.is_file():
                    graph_pending.replace(self.graph_path)
            else:
                logger.warning("%s: discarding uncommitted forget step", page_id)
                sidecar.unlink()
                raster.unlink(missing_ok=True)
        graph_pending.unlink(missing_ok=True)

    def forget(
        self,
        policy: ForgettingPolicy,
        now: date,
        config: EngineConfig,
        *,
        perceiver=None,
        embedder=None,
    ) -> ForgetResult:
        """Degrade, fade and prune every page, committing each page atomically."""
        if perceiver is None or embedder is None:
            default_perceiver, default_embedder = providers(config)
            perceiver = perceiver or default_perceiver
            embedder = embedder or default_embedder
        lock = self._writer()
        try:
            self._recover()
            graph = self.load_graph(config)
            result = ForgetResult(policy.name, now)
            stages: Counter = Counter()
            for page_id in self.pages.page_ids():
                page = self.pages.read(page_id)
                new = degrade_page(page, policy, now)
                if new is page:
                    stages[page.fidelity.stage] += 1
                    continue
                lost = fade_nodes(new, graph, perceiver, embedder, config.tau_q)
                pruned = prune_graph(graph, lost)
                self._commit_forget(page, new, graph, lost, pruned.pruned_paths)
                stages[new.fidelity.stage] += 1
                result.pages_changed += 1
                result.lost_mentions += len(lost)
                result.pruned_paths += len(pruned.pruned_paths)
                result.removed_nodes += len(pruned.removed_nodes)
            result.stage_counts = {s: stages.get(s, 0) for s in STAGES}
            result.storage = self.storage()
            return result
        finally:
            lock.release()

    def _commit_forget(self, old: ScrapbookPage, new: ScrapbookPage, graph: EMGraph, lost, pruned_paths) -> None:
        self.pages.write(new, suffix=PENDING)
        graph_pending = self.graph_path.with_name(self.graph_path.name + PENDING)
        graph_pending.write_text(json.dumps(graph.to_json(), sort_keys=True), encoding="utf-8")
        _append_jsonl(
            self.forget_journal,
            {
                "page_id": new.page_id,
                "from_stage": old.fidelity.stage,
                "to_stage": new.fidelity.stage,
                "lost_mentions": [list(m) for m in lost],
                "pruned_paths": list(pruned_paths),
            },
        )
        for ext in ("jpg", "json"):
            src = self.pages.directory / f"{new.page_id}.{ext}{PENDING}"
            src.replace(self.pages.directory / f"{new.page_id}.{ext}")
        graph_pending.replace(self.graph_path)

    # -- read side -----------------------------------------------------------

    def memory_view(self, config: Optional[EngineConfig] = None) -> MemoryView:
        graph = self.load_graph(config)
        pages: Dict[str, PageInfo] = {}
        fused: Dict[str, str] = {}
        for page_id in self.pages.page_ids():
            data = json.loads(self.pages.sidecar_path(page_id).read_text(encoding="utf-8"))
            texts = dict(data.get("texts", {}))
            for item_id, caption in data.get("captions", {}).items():
                texts[item_id] = (texts.get(item_id, "") + " " + caption).strip()
            pages[page_id] = PageInfo(page_id, date.fromisoformat(data["date"]), tuple(data["source_ids"]), texts)
            ppath = self.perception_path(page_id)
            if ppath.is_file():
                rec = json.loads(ppath.read_text(encoding="utf-8"))
                fused[page_id] = fuse_text(rec["ocr_text"], rec["visual_summary"]).text
        return MemoryView(graph, pages, fused)

    def page_of_items(self) -> Dict[str, str]:
        mapping = {}
        for page_id in self.pages.page_ids():
            data = json.loads(self.pages.sidecar_path(page_id).read_text(encoding="utf-8"))
            for item_id in data["source_ids"]:
                mapping[item_id] = page_id
        return mapping

    def retriever(self, config: EngineConfig, *, perceiver=None, embedder=None) -> Retriever:
        if perceiver is None or embedder is None:
            default_perceiver, default_embedder = providers(config)
            perceiver = perceiver or default_perceiver
            embedder = embedder or default_embedder
        return Retriever(
            perceiver.extract_query_nodes,
            embedder.embed_many,
            tau_q=config.tau_q,
            day_budget=config.day_budget,
            visual_weight=config.visual_weight,
        )

    def storage(self, baseline_bytes: Optional[int] = None) -> StorageReport:
        files = [self.pages.raster_path(pid) for pid in self.pages.page_ids()]
        baseline = self.baseline_bytes() if baseline_bytes is None else baseline_bytes
        return storage_report(files, self.graph_path, baseline)
