"""Optical forgetting: staged page degradation, node fading and graph pruning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .emgraph import EMGraph, GraphError
from .pagebuilder import ScrapbookPage, decode_raster, encode_jpeg, with_raster
from .perception import fuse_text, survives
from .policy import DegradationState, ForgettingPolicy, stage_of, stage_rank

logger = logging.getLogger(__name__)

MIN_SURVIVORS = 2
MIN_FRACTION = 0.5
MIB = 1024 * 1024

LostMention = Tuple[int, str]  # (node_id, page_id)


class DegradeError(RuntimeError):
    pass


def scaled_dims(width: int, height: int, scale: float) -> Tuple[int, int]:
    return max(1, int(math.floor(width * scale + 0.5))), max(1, int(math.floor(height * scale + 0.5)))


def page_age(page_date: date, now: date) -> int:
    age = (now - page_date).days
    if age < 0:
        raise ValueError(f"page dated {page_date} is after now={now}")
    return age


def degrade_page(page: ScrapbookPage, policy: ForgettingPolicy, now: date) -> ScrapbookPage:
    """Move a page to the stage its age calls for; a no-op unless the stage deepens.

    Degradation works from the current raster (originals are not kept), with
    target dimensions taken from the page's first-rendered size so repeated
    steps do not accumulate rounding. Quality and scale never increase.
    """
    target = stage_of(page_age(page.date, now), policy)
    current = page.fidelity
    if stage_rank(target) <= stage_rank(current.stage):
        return page
    quality, scale = policy.params(target)
    quality = min(quality, current.applied_quality)
    scale = min(scale, current.applied_scale)
    if quality == current.applied_quality and scale == current.applied_scale:
        return page
    try:
        img = decode_raster(page.raster)
    except (OSError, ValueError) as exc:
        raise DegradeError(f"{page.page_id}: cannot decode raster: {exc}") from exc
    width, height = scaled_dims(page.base_width, page.base_height, scale)
    if (width, height) != img.size:
        img = img.resize((width, height), Image.LANCZOS)
    raster = encode_jpeg(img, quality)
    return with_raster(page, raster, width, height, DegradationState(target, quality, scale))


def fade_nodes(
    page: ScrapbookPage,
    graph: EMGraph,
    perceiver=None,
    embedder=None,
    tau_q: float = 0.60,
) -> List[LostMention]:
    """Node mentions from ``page`` that no longer survive at its current fidelity.

    Without a remote perceiver a mention survives iff its salience is at least
    ``1 - legibility``. A remote perceiver re-reads the degraded raster and a
    mention survives iff a re-extracted phrase matches its node with cosine
    >= tau_q.
    """
    mentions = sorted(
        (node.node_id, node.page_salience[page.page_id])
        for node in graph.nodes.values()
        if page.page_id in node.page_salience
    )
    if perceiver is None or getattr(perceiver, "mode", "mock") == "mock":
        ell = page.fidelity.legibility
        return [(nid, page.page_id) for nid, sal in mentions if not survives(sal, ell)]
    if embedder is None:
        raise ValueError("remote fading needs an embedder")
    perception = perceiver.perceive_page(page)
    fused = fuse_text(perception.ocr_text, perception.visual_summary)
    phrases = list(dict.fromkeys(perceiver.extract_nodes(fused, {"date": page.date.isoformat()}) + perception.phrases))
    if not phrases:
        return [(nid, page.page_id) for nid, _ in mentions]
    seen = np.asarray(embedder.embed_many(phrases))
    lost = []
    for nid, _ in mentions:
        if float(np.max(seen @ graph.nodes[nid].centroid)) < tau_q:
            lost.append((nid, page.page_id))
    return lost


def coherent(path_len: int, original_len: int, min_survivors: int = MIN_SURVIVORS, min_fraction: float = MIN_FRACTION) -> bool:
    return path_len >= min_survivors and path_len >= min_fraction * original_len


@dataclass
class PruneResult:
    pruned_paths: List[int] = field(default_factory=list)
    removed_nodes: List[int] = field(default_factory=list)
    cleared: List[LostMention] = field(default_factory=list)


def prune_graph(
    graph: EMGraph,
    lost: Iterable[LostMention],
    *,
    min_survivors: int = MIN_SURVIVORS,
    min_fraction: float = MIN_FRACTION,
) -> PruneResult:
    """Drop faded node mentions, prune paths that lose coherence, purge orphans.

    Only paths on the page where a mention faded lose that node. A path is
    pruned once fewer than ``min_survivors`` nodes or less than
    ``min_fraction`` of its original length remain; afterwards every node no
    longer on any path is removed. All mentions are validated before any
    mutation.
    """
    lost = sorted(set(lost))
    for node_id, page_id in lost:
        node = graph.nodes.get(node_id)
        if node is None or page_id not in node.page_salience:
            raise GraphError(f"unknown mention (node {node_id}, page {page_id})")
    result = PruneResult(cleared=list(lost))
    for node_id, page_id in lost:
        for path in graph.paths_on_page(page_id):
            if node_id not in path.node_ids:
                continue
            path.node_ids.remove(node_id)
            if not coherent(len(path.node_ids), path.original_length, min_survivors, min_fraction):
                del graph.paths[path.path_id]
                result.pruned_paths.append(path.path_id)
        graph.nodes[node_id].page_salience.pop(page_id, None)
    # Mentions must track path membership; anything left without a path is purged.
    on_page: dict = {}
    for path in graph.paths.values():
        for nid in path.node_ids:
            on_page.setdefault(nid, set()).add(path.page_id)
    for node_id in sorted(graph.nodes):
        node = graph.nodes[node_id]
        pages = on_page.get(node_id, set())
        for page_id in [p for p in node.page_salience if p not in pages]:
            del node.page_salience[page_id]
        if not pages:
            graph.remove_node(node_id)
            result.removed_nodes.append(node_id)
    return result


@dataclass(frozen=True)
class StorageReport:
    scrapbook_bytes: int
    graph_bytes: int
    baseline_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.scrapbook_bytes + self.graph_bytes

    @property
    def saving_fraction(self) -> Optional[float]:
        if self.baseline_bytes <= 0:
            return None
        return 1.0 - self.total_bytes / self.baseline_bytes

    def to_json(self) -> dict:
        return {
            "scrapbook_bytes": self.scrapbook_bytes,
            "graph_bytes": self.graph_bytes,
            "total_bytes": self.total_bytes,
            "baseline_bytes": self.baseline_bytes,
            "saving_fraction": self.saving_fraction,
            "scrapbook_mib": round(self.scrapbook_bytes / MIB, 1),
            "total_mib": round(self.total_bytes / MIB, 1),
            "baseline_mib": round(self.baseline_bytes / MIB, 1),
        }


def mib(value: float) -> int:
    return int(round(value * MIB))


def storage_report(page_files: Sequence[Path], graph_file: Path, baseline_bytes: int) -> StorageReport:
    missing = [str(p) for p in list(page_files) + [graph_file] if not Path(p).is_file()]
    if missing:
        raise FileNotFoundError("missing store files: " + ", ".join(missing))
    scrapbook = sum(Path(p).stat().st_size for p in page_files)
    return StorageReport(scrapbook, Path(graph_file).stat().st_size, baseline_bytes)
