"""Randomized properties checked against the loop-based oracles."""
from __future__ import annotations

from datetime import date, timedelta

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import oracles
from conftest import make_item, noisy_image
from scrapmem.evaluation import exact_match, jaccard, recall_at_k, to_list
from scrapmem.forgetting import degrade_page, prune_graph
from scrapmem.pagebuilder import PageLayout, consolidate, grid_geometry, page_bytes, scaled_height
from scrapmem.policy import PRESETS
from scrapmem.synthetic import random_graph

SLOW = settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
FAST = settings(max_examples=200, deadline=None)

words = st.sampled_from(["a", "B", "c ", " D", "lisbon", "Lisbon", "240", "1,000", "1000", "$5", "5", "eur"])
list_text = st.lists(words, max_size=5).flatmap(lambda ws: st.sampled_from([", ", "; ", "\n"]).map(lambda sep: sep.join(ws)))


@FAST
@given(list_text, list_text)
def test_jaccard_matches_oracle(a, b) -> None:
    assert to_list(a) == oracles.split_list(a)
    assert jaccard(a, b) == oracles.jaccard(a, b) == jaccard(b, a)
    assert 0.0 <= jaccard(a, b) <= 1.0


@FAST
@given(words, words)
def test_exact_match_matches_oracle(a, b) -> None:
    assert exact_match(a, b) == oracles.exact_match(a, b)


@FAST
@given(st.sets(st.text("abcde", min_size=1, max_size=2), min_size=1, max_size=6), st.lists(st.text("abcdef", min_size=1, max_size=2), max_size=10))
def test_recall_matches_oracle(evidence, retrieved) -> None:
    assert recall_at_k(evidence, retrieved) == oracles.recall(evidence, retrieved)


tile_sizes = st.lists(st.tuples(st.integers(16, 2000), st.integers(16, 2000)), min_size=1, max_size=12)


@FAST
@given(tile_sizes, st.sampled_from([(1024, 512), (1024, 256), (768, 256)]))
def test_grid_height_matches_oracle(sizes, widths) -> None:
    layout = PageLayout(page_width=widths[0], tile_width=widths[1])
    heights = [scaled_height(w, h, layout.tile_width) for w, h in sizes]
    boxes, height = grid_geometry(heights, layout)
    _, _, expected = oracles.layout_height(sizes, *widths)
    assert height == expected
    for x0, y0, x1, y1 in boxes:
        assert 0 <= x0 < x1 <= layout.page_width and 0 <= y0 < y1 <= height


@FAST
@given(tile_sizes, st.data())
def test_removing_a_tile_never_grows_page(sizes, data) -> None:
    layout = PageLayout()
    heights = [scaled_height(w, h, layout.tile_width) for w, h in sizes]
    drop = data.draw(st.integers(0, len(heights) - 1))
    rest = heights[:drop] + heights[drop + 1 :]
    if rest:
        assert grid_geometry(rest, layout)[1] <= grid_geometry(heights, layout)[1]


@SLOW
@given(st.integers(0, 10_000), st.integers(1, 3), st.sampled_from(["very_soft", "softer_old", "timed-gentle", "boundary_365"]))
def test_bytes_shrink_with_each_stage(seed, n_images, preset) -> None:
    day = date(2021, 3, 1)
    items = [make_item(f"i{k}", f"2021-03-01T1{k}:00:00Z", kind="image", payload="x.jpg") for k in range(n_images)]
    images = {f"i{k}": noisy_image(seed + k, (320, 240)) for k in range(n_images)}
    page = consolidate(day, items, images=images)
    policy = PRESETS[preset]
    mid = degrade_page(page, policy, day + timedelta(days=policy.boundaries[0] + 1))
    old = degrade_page(mid, policy, day + timedelta(days=policy.boundaries[1] + 1))
    assert page_bytes(old) <= page_bytes(mid) <= page_bytes(page)
    assert (old.width, old.height) <= (mid.width, mid.height)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.6))
def test_prune_matches_reference_executor(seed, loss_rate) -> None:
    rng = np.random.default_rng(seed)
    graph = random_graph(rng, max_nodes=30, max_paths=15)
    mentions = {n.node_id: set(n.source_pages) for n in graph.nodes.values()}
    all_mentions = sorted((n, p) for n, pages in mentions.items() for p in pages)
    lost = [m for m in all_mentions if rng.uniform() < loss_rate]
    paths = {p.path_id: (p.page_id, list(p.node_ids), len(p.node_ids)) for p in graph.paths.values()}
    expected_paths, expected_nodes = oracles.reference_prune(paths, mentions, lost)
    prune_graph(graph, lost)
    assert {pid: p.node_ids for pid, p in graph.paths.items()} == expected_paths
    assert set(graph.nodes) == expected_nodes
