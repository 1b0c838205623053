"""Episodic memory graph: canonical nodes, EM-paths and the path/node incidence."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import sparse

from .embedding import EmbeddingError

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.90
_NORM_TOL = 1e-6


class GraphError(ValueError):
    pass


@dataclass
class SemanticNode:
    node_id: int
    phrase: str
    centroid: np.ndarray
    support: int = 1
    salience: float = 0.0
    # page_id -> salience of the mention on that page
    page_salience: Dict[str, float] = field(default_factory=dict)

    @property
    def source_pages(self) -> Set[str]:
        return set(self.page_salience)

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "phrase": self.phrase,
            "centroid": [float(x) for x in self.centroid],
            "support": self.support,
            "salience": self.salience,
            "source_pages": sorted(self.page_salience),
            "page_salience": dict(sorted(self.page_salience.items())),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "SemanticNode":
        return cls(
            node_id=int(data["node_id"]),
            phrase=str(data["phrase"]),
            centroid=np.asarray(data["centroid"], dtype=np.float64),
            support=int(data["support"]),
            salience=float(data["salience"]),
            page_salience={str(k): float(v) for k, v in data["page_salience"].items()},
        )


@dataclass
class VisualNode:
    node_id: int
    page_id: str
    box: Tuple[int, int, int, int]
    embedding: np.ndarray

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "page_id": self.page_id,
            "box": list(self.box),
            "embedding": [float(x) for x in self.embedding],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "VisualNode":
        return cls(int(data["node_id"]), str(data["page_id"]), tuple(data["box"]), np.asarray(data["embedding"], dtype=np.float64))  # type: ignore[arg-type]


@dataclass
class EMPath:
    path_id: int
    page_id: str
    date: date
    node_ids: List[int]
    summary: str
    original_length: int = 0

    def __post_init__(self) -> None:
        if not self.original_length:
            self.original_length = len(self.node_ids)

    def to_json(self) -> dict:
        return {
            "path_id": self.path_id,
            "page_id": self.page_id,
            "date": self.date.isoformat(),
            "node_ids": list(self.node_ids),
            "summary": self.summary,
            "original_length": self.original_length,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "EMPath":
        return cls(
            int(data["path_id"]),
            str(data["page_id"]),
            date.fromisoformat(data["date"]),
            [int(n) for n in data["node_ids"]],
            str(data["summary"]),
            int(data.get("original_length", 0)),
        )


@dataclass(frozen=True)
class MergeRecord:
    phrase: str
    node_id: int
    similarity: float
    merged: bool


def config_hash(settings: Mapping[str, object]) -> str:
    blob = json.dumps(dict(settings), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class EMGraph:
    """Single-writer graph; take :meth:`snapshot` copies for concurrent readers."""

    def __init__(self, tau: float = DEFAULT_TAU, config_hash: str = "", audit: bool = False) -> None:
        if not 0 < tau <= 1:
            raise GraphError("tau must lie in (0, 1]")
        self.tau = tau
        self.config_hash = config_hash
        self.nodes: Dict[int, SemanticNode] = {}
        self.visual_nodes: Dict[int, VisualNode] = {}
        self.paths: Dict[int, EMPath] = {}
        self.next_node_id = 0
        self.next_visual_id = 0
        self.next_path_id = 0
        self.audit: Optional[List[MergeRecord]] = [] if audit else None
        self._matrix_cache: Optional[Tuple[List[int], np.ndarray]] = None

    # -- nodes ---------------------------------------------------------------

    def _centroids(self) -> Tuple[List[int], np.ndarray]:
        if self._matrix_cache is None:
            ids = sorted(self.nodes)
            mat = np.stack([self.nodes[i].centroid for i in ids]) if ids else np.zeros((0, 0))
            self._matrix_cache = (ids, mat)
        return self._matrix_cache

    def _invalidate(self) -> None:
        self._matrix_cache = None

    def similarities(self, embedding: np.ndarray) -> Tuple[List[int], np.ndarray]:
        ids, mat = self._centroids()
        if not ids:
            return ids, np.zeros(0)
        return ids, mat @ embedding

    def merge_or_insert(
        self,
        phrase: str,
        embedding: np.ndarray,
        page_id: str,
        salience: float,
        tau: Optional[float] = None,
    ) -> int:
        """Merge a mention into its most similar canonical node, or insert it.

        Merges iff the best cosine against existing centroids is >= tau; ties
        on the best similarity go to the lowest node id.
        """
        tau = self.tau if tau is None else tau
        if not 0 < tau <= 1:
            raise GraphError("tau must lie in (0, 1]")
        embedding = np.asarray(embedding, dtype=np.float64)
        if not np.all(np.isfinite(embedding)):
            raise EmbeddingError(f"non-finite embedding for {phrase!r}")
        if abs(float(np.linalg.norm(embedding)) - 1.0) > _NORM_TOL:
            raise EmbeddingError(f"embedding for {phrase!r} is not unit-norm")
        if not 0.0 <= salience <= 1.0:
            raise GraphError("salience must lie in [0, 1]")
        ids, sims = self.similarities(embedding)
        if ids:
            best = int(np.argmax(sims))  # first maximum == lowest node id
            sim_max = float(sims[best])
            if sim_max >= tau:
                node = self.nodes[ids[best]]
                merged = node.support * node.centroid + embedding
                node.centroid = merged / np.linalg.norm(merged)
                node.support += 1
                node.salience = max(node.salience, salience)
                node.page_salience[page_id] = max(node.page_salience.get(page_id, 0.0), salience)
                self._invalidate()
                if self.audit is not None:
                    self.audit.append(MergeRecord(phrase, node.node_id, sim_max, True))
                return node.node_id
        node_id = self.next_node_id
        self.next_node_id += 1
        self.nodes[node_id] = SemanticNode(node_id, " ".join(phrase.lower().split()), embedding.copy(), 1, salience, {page_id: salience})
        self._invalidate()
        if self.audit is not None:
            self.audit.append(MergeRecord(phrase, node_id, float(sims.max()) if len(ids) else 0.0, False))
        return node_id

    def add_visual_node(self, page_id: str, box: Sequence[int], embedding: np.ndarray) -> int:
        node_id = self.next_visual_id
        self.next_visual_id += 1
        self.visual_nodes[node_id] = VisualNode(node_id, page_id, tuple(int(b) for b in box), np.asarray(embedding, dtype=np.float64))  # type: ignore[arg-type]
        return node_id

    def remove_node(self, node_id: int) -> None:
        if any(node_id in p.node_ids for p in self.paths.values()):
            raise GraphError(f"node {node_id} still referenced by a path")
        del self.nodes[node_id]
        self._invalidate()

    # -- paths ---------------------------------------------------------------

    def add_path(self, page_id: str, day: date, node_ids: Sequence[int], summary: str) -> int:
        if not node_ids:
            raise GraphError("a path needs at least one node")
        ordered: List[int] = []
        for nid in node_ids:
            if nid not in self.nodes:
                raise GraphError(f"unknown node id {nid}")
            if page_id not in self.nodes[nid].page_salience:
                raise GraphError(f"node {nid} has no mention on {page_id}")
            if nid not in ordered:
                ordered.append(nid)
        path_id = self.next_path_id
        self.next_path_id += 1
        self.paths[path_id] = EMPath(path_id, page_id, day, ordered, summary)
        return path_id

    def paths_on_page(self, page_id: str) -> List[EMPath]:
        return [p for _, p in sorted(self.paths.items()) if p.page_id == page_id]

    # -- incidence -----------------------------------------------------------

    def q_pairs(self) -> List[Tuple[int, int]]:
        return sorted((p.path_id, n) for p in self.paths.values() for n in p.node_ids)

    def incidence(self) -> Tuple[List[int], List[int], sparse.csr_matrix]:
        """Binary |paths| x |nodes| matrix with its row and column id orders."""
        path_ids = sorted(self.paths)
        node_ids = sorted(self.nodes)
        row_of = {pid: i for i, pid in enumerate(path_ids)}
        col_of = {nid: j for j, nid in enumerate(node_ids)}
        pairs = self.q_pairs()
        rows = [row_of[p] for p, _ in pairs]
        cols = [col_of[n] for _, n in pairs]
        q = sparse.csr_matrix(
            (np.ones(len(pairs), dtype=np.int8), (rows, cols)),
            shape=(len(path_ids), len(node_ids)),
        )
        return path_ids, node_ids, q

    def column_sums(self) -> Dict[int, int]:
        sums = {nid: 0 for nid in self.nodes}
        for _, n in self.q_pairs():
            sums[n] += 1
        return sums

    def link_adjacency(self) -> Tuple[List[int], np.ndarray]:
        """Nodes are linked iff they co-occur on at least one path."""
        if not self.nodes:
            raise GraphError("graph is empty")
        _, node_ids, q = self.incidence()
        co = (q.T.astype(np.int32) @ q.astype(np.int32)).toarray()
        adj = (co > 0).astype(np.int8)
        np.fill_diagonal(adj, 0)
        return node_ids, adj

    # -- persistence ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tau": self.tau,
            "next_ids": {"node": self.next_node_id, "visual": self.next_visual_id, "path": self.next_path_id},
            "nodes": [self.nodes[i].to_json() for i in sorted(self.nodes)],
            "visual_nodes": [self.visual_nodes[i].to_json() for i in sorted(self.visual_nodes)],
            "paths": [self.paths[i].to_json() for i in sorted(self.paths)],
            "q": [list(pair) for pair in self.q_pairs()],
        }

    @classmethod
    def from_json(cls, data: Mapping, *, expected_hash: Optional[str] = None) -> "EMGraph":
        graph = cls(tau=float(data.get("tau", DEFAULT_TAU)), config_hash=str(data.get("config_hash", "")))
        for raw in data.get("nodes", []):
            node = SemanticNode.from_json(raw)
            graph.nodes[node.node_id] = node
        for raw in data.get("visual_nodes", []):
            vnode = VisualNode.from_json(raw)
            graph.visual_nodes[vnode.node_id] = vnode
        for raw in data.get("paths", []):
            path = EMPath.from_json(raw)
            graph.paths[path.path_id] = path
        next_ids = data.get("next_ids", {})
        graph.next_node_id = int(next_ids.get("node", max(graph.nodes, default=-1) + 1))
        graph.next_visual_id = int(next_ids.get("visual", max(graph.visual_nodes, default=-1) + 1))
        graph.next_path_id = int(next_ids.get("path", max(graph.paths, default=-1) + 1))
        q = sorted((int(p), int(n)) for p, n in data.get("q", []))
        graph.validate(q)
        if expected_hash is not None and graph.config_hash != expected_hash:
            logger.warning("graph config hash %s differs from current settings %s", graph.config_hash, expected_hash)
        return graph

    def validate(self, q: Optional[Sequence[Tuple[int, int]]] = None) -> None:
        """Check incidence soundness and node invariants; raise GraphError on violation."""
        for p, n in q if q is not None else []:
            if p not in self.paths or n not in self.nodes:
                raise GraphError(f"dangling incidence ({p}, {n})")
        for path in self.paths.values():
            if not path.node_ids:
                raise GraphError(f"path {path.path_id} is empty")
            if len(set(path.node_ids)) != len(path.node_ids):
                raise GraphError(f"path {path.path_id} repeats a node")
            for n in path.node_ids:
                if n not in self.nodes:
                    raise GraphError(f"dangling incidence ({path.path_id}, {n})")
        derived = self.q_pairs()
        if q is not None and list(q) != derived:
            raise GraphError("Q triplets disagree with path membership")
        for node in self.nodes.values():
            if node.support < 1:
                raise GraphError(f"node {node.node_id} has support < 1")
            if not node.page_salience:
                raise GraphError(f"node {node.node_id} has no source pages")
            if abs(float(np.linalg.norm(node.centroid)) - 1.0) > _NORM_TOL:
                raise GraphError(f"node {node.node_id} centroid is not unit-norm")

    def persist(self, path: Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_json(), sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path, *, expected_hash: Optional[str] = None) -> "EMGraph":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")), expected_hash=expected_hash)

    def snapshot(self) -> "EMGraph":
        return EMGraph.from_json(self.to_json())

    def structurally_equal(self, other: "EMGraph") -> bool:
        return self.to_json() == other.to_json()

