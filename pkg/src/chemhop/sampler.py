"""Randomized BFS path sampling with the distinct-source constraint.

A sampled path of length K visits K+1 pairwise-distinct nodes over K edges
whose sources are pairwise distinct. Traversal treats edges as undirected;
the stored direction of each triplet is preserved for question phrasing.
Randomization comes from a seeded generator shuffling the start-node order
and each expansion's neighbor order, so output is a deterministic function
of (graph, k, n, seed). A path and its reverse count as the same sample.

The source-distinctness scope defaults to the chunk id on each edge; pass
``source_of`` to coarsen it (e.g. map chunk ids to document ids).
"""

from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import NoPathsAvailable
from .graph import KnowledgeGraph
from .relations import Triplet

log = logging.getLogger(__name__)

MAX_HOPS = 4


@dataclass
class PathSample:
    nodes: list[str]
    edges: list[Triplet]
    k: int
    shortcut_count: int
    seed_trace: str


def _canonical_sequence(nodes: tuple[str, ...]) -> tuple[str, ...]:
    reverse = tuple(reversed(nodes))
    return nodes if nodes <= reverse else reverse


def count_shortcuts(sample: PathSample, g: KnowledgeGraph) -> int:
    """Edges (undirected simple view) joining non-adjacent nodes of the path."""
    nodes = sample.nodes
    count = 0
    for i in range(len(nodes)):
        for j in range(i + 2, len(nodes)):
            if g.has_edge(nodes[i], nodes[j]):
                count += 1
    return count


def sample_paths(
    g: KnowledgeGraph,
    k: int,
    n: int,
    seed: int,
    max_k: int = MAX_HOPS,
    source_of: Optional[Callable[[Triplet], str]] = None,
) -> list[PathSample]:
    """Sample up to *n* distinct K-hop paths from *g*.

    BFS runs from every start node in a shuffled order, expanding partial
    paths in shuffled neighbor order and rejecting a prefix as soon as it
    would reuse an edge source. Raises :class:`NoPathsAvailable` when the
    graph holds no valid path of length *k* at all.
    """
    if k < 1 or k > max_k:
        raise ValueError(f"k must be in [1, {max_k}], got {k}")
    if n < 1:
        raise ValueError("n must be positive")
    if not g.nodes:
        raise NoPathsAvailable("graph is empty")
    source_key = source_of or (lambda t: t.source_chunk_id)

    rng = random.Random(seed)
    starts = sorted(g.nodes)
    rng.shuffle(starts)

    results: list[PathSample] = []
    seen: set[tuple[str, ...]] = set()

    for start in starts:
        # queue entries: (node tuple, edge list, used source keys)
        queue: deque[tuple[tuple[str, ...], list[Triplet], frozenset[str]]] = deque()
        queue.append(((start,), [], frozenset()))
        while queue:
            nodes, edges, used = queue.popleft()
            if len(edges) == k:
                canon = _canonical_sequence(nodes)
                if canon in seen:
                    continue
                seen.add(canon)
                sample = PathSample(
                    nodes=list(nodes),
                    edges=list(edges),
                    k=k,
                    shortcut_count=0,
                    seed_trace=f"seed={seed};k={k};idx={len(results)}",
                )
                sample.shortcut_count = count_shortcuts(sample, g)
                results.append(sample)
                if len(results) >= n:
                    return results
                continue
            tip = nodes[-1]
            expansions: list[tuple[str, int]] = []
            for nbr in g.neighbors(tip):
                if nbr in nodes:
                    continue
                for edge_idx in g.edges_between(tip, nbr):
                    expansions.append((nbr, edge_idx))
            rng.shuffle(expansions)
            for nbr, edge_idx in expansions:
                edge = g.edges[edge_idx]
                src = source_key(edge)
                if src in used:
                    continue
                queue.append((nodes + (nbr,), edges + [edge], used | {src}))

    if not results:
        raise NoPathsAvailable(f"no valid paths of length {k} under the distinct-source constraint")
    return results
