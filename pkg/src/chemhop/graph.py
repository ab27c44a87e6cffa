"""Knowledge graph assembly, persistence, and network statistics.

Nodes are merged by normalized canonical name; edges keep full provenance
(one edge per (head, relation, tail, source chunk)). Statistics are computed
on the *undirected simple view*: parallel edges collapsed, self-loops
excluded. The multi-edge degree is reported alongside as a secondary column.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import networkx as nx

from .entities import Entity, merge_entities
from .enrich import EnrichmentRecord, record_from_json, record_to_json
from .errors import CorruptFile
from .relations import Triplet
from .textnorm import normalize_key

log = logging.getLogger(__name__)

GRAPH_SCHEMA = "chemhop/graph"
GRAPH_VERSION = 1

TOP_DEGREE_COUNT = 5


@dataclass
class NodeData:
    entity: Entity
    enrichment: Optional[EnrichmentRecord] = None
    source_chunk_ids: list[str] = field(default_factory=list)


@dataclass
class GraphStats:
    node_count: int
    edge_count: int
    multi_edge_count: int
    density: float
    degree_min: float
    degree_max: float
    degree_avg: float
    component_count: int
    largest_component: int
    avg_clustering: float
    degree_assortativity: Optional[float]
    top_degree_nodes: list[tuple[str, int]]
    top_degree_nodes_multi: list[tuple[str, int]]


class KnowledgeGraph:
    """Immutable-after-build graph of entities and provenance-carrying edges."""

    def __init__(self):
        self.nodes: dict[str, NodeData] = {}
        self.edges: list[Triplet] = []
        self._key_to_name: dict[str, str] = {}
        # undirected simple adjacency: name -> neighbor name -> [edge indices]
        self._adj: dict[str, dict[str, list[int]]] = {}

    # -- construction -----------------------------------------------------------

    def _add_node(self, entity: Entity) -> str:
        key = entity.key
        name = self._key_to_name.get(key)
        if name is None:
            name = entity.canonical_name
            self._key_to_name[key] = name
            self.nodes[name] = NodeData(entity=entity)
            self._adj[name] = {}
        else:
            self.nodes[name].entity.surface_forms |= entity.surface_forms
        return name

    def _add_edge(self, triplet: Triplet) -> None:
        idx = len(self.edges)
        self.edges.append(triplet)
        u = self._key_to_name[normalize_key(triplet.head)]
        v = self._key_to_name[normalize_key(triplet.tail)]
        self._adj[u].setdefault(v, []).append(idx)
        self._adj[v].setdefault(u, []).append(idx)

    # -- queries -----------------------------------------------------------------

    def resolve(self, name: str) -> Optional[str]:
        return self._key_to_name.get(normalize_key(name))

    def neighbors(self, name: str) -> list[str]:
        return sorted(self._adj.get(name, {}))

    def has_edge(self, u: str, v: str) -> bool:
        return v in self._adj.get(u, {})

    def edges_between(self, u: str, v: str) -> list[int]:
        return list(self._adj.get(u, {}).get(v, []))

    def simple_edges(self) -> list[tuple[str, str]]:
        """Unordered node pairs of the undirected simple view (no self-loops)."""
        pairs: set[tuple[str, str]] = set()
        for u, nbrs in self._adj.items():
            for v in nbrs:
                if u == v:
                    continue
                pairs.add((u, v) if u <= v else (v, u))
        return sorted(pairs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __repr__(self) -> str:
        return f"KnowledgeGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"


def build(
    entities: Iterable[Entity],
    enrichments: Iterable[EnrichmentRecord] = (),
    triplets: Iterable[Triplet] = (),
    entity_chunks: Optional[dict[str, list[str]]] = None,
) -> KnowledgeGraph:
    """Assemble a graph from verified entities, enrichment records, and triplets.

    Triplets whose endpoints cannot be resolved to an entity (after
    normalization) are dropped and logged; build itself is total.
    ``entity_chunks`` optionally maps normalized entity keys to every chunk the
    entity was verified in (beyond its first).
    """
    g = KnowledgeGraph()
    merged = merge_entities(entities)
    for key, entity in merged.items():
        name = g._add_node(entity)
        sources = set(entity_chunks.get(key, [])) if entity_chunks else set()
        if entity.first_chunk_id:
            sources.add(entity.first_chunk_id)
        g.nodes[name].source_chunk_ids = sorted(sources)

    for rec in enrichments:
        name = g.resolve(rec.entity)
        if name is None:
            log.debug("enrichment for unknown entity %r ignored", rec.entity)
            continue
        g.nodes[name].enrichment = rec

    dropped = 0
    for t in triplets:
        head = g.resolve(t.head)
        tail = g.resolve(t.tail)
        if head is None or tail is None:
            dropped += 1
            log.warning("dropping unresolvable triplet %r", t)
            continue
        if head == tail:
            dropped += 1
            log.warning("dropping self-loop triplet %r", t)
            continue
        g._add_edge(Triplet(head=head, relation=t.relation, tail=tail, source_chunk_id=t.source_chunk_id))
        for endpoint in (head, tail):
            node = g.nodes[endpoint]
            if t.source_chunk_id not in node.source_chunk_ids:
                node.source_chunk_ids.append(t.source_chunk_id)
                node.source_chunk_ids.sort()
    if dropped:
        log.info("build dropped %d unresolvable triplets", dropped)
    return g


# -- statistics -------------------------------------------------------------------


def _as_nx(g: KnowledgeGraph) -> nx.Graph:
    simple = nx.Graph()
    simple.add_nodes_from(g.nodes)
    simple.add_edges_from(g.simple_edges())
    return simple


def stats(g: KnowledgeGraph) -> GraphStats:
    """Network-level statistics on the undirected simple view.

    Assortativity is None (undefined) when the degree variance at edge
    endpoints is zero, e.g. on regular graphs and graphs without edges.
    """
    simple = _as_nx(g)
    n = simple.number_of_nodes()
    m = simple.number_of_edges()

    degrees = dict(simple.degree())
    degree_values = list(degrees.values()) or [0]
    multi_degrees = {name: sum(len(ix) for ix in g._adj[name].values()) for name in g.nodes}

    density = nx.density(simple) if n > 1 else 0.0
    if n == 0:
        components: list[set] = []
    else:
        components = list(nx.connected_components(simple))

    assortativity: Optional[float] = None
    if m > 0:
        with warnings.catch_warnings():
            # zero degree variance yields nan; we report it as undefined
            warnings.simplefilter("ignore", RuntimeWarning)
            value = nx.degree_assortativity_coefficient(simple)
        if not math.isnan(value):
            assortativity = float(value)

    def top(d: dict[str, int]) -> list[tuple[str, int]]:
        return sorted(d.items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_DEGREE_COUNT]

    return GraphStats(
        node_count=n,
        edge_count=m,
        multi_edge_count=len(g.edges),
        density=float(density),
        degree_min=float(min(degree_values)),
        degree_max=float(max(degree_values)),
        degree_avg=float(sum(degree_values) / n) if n else 0.0,
        component_count=len(components),
        largest_component=max((len(c) for c in components), default=0),
        avg_clustering=float(nx.average_clustering(simple)) if n else 0.0,
        degree_assortativity=assortativity,
        top_degree_nodes=top(degrees),
        top_degree_nodes_multi=top(multi_degrees),
    )


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return "undefined"
    return f"{value:.6g}"


def stats_rows(s: GraphStats) -> list[tuple[str, str]]:
    return [
        ("Number of nodes", str(s.node_count)),
        ("Number of edges", str(s.edge_count)),
        ("Number of edges (with parallels)", str(s.multi_edge_count)),
        ("Density", _fmt(s.density)),
        ("Degree (min / max / avg)", f"{s.degree_min:g} / {s.degree_max:g} / {s.degree_avg:.6g}"),
        ("Connected components", str(s.component_count)),
        ("Largest component size", str(s.largest_component)),
        ("Avg. clustering coefficient", _fmt(s.avg_clustering)),
        ("Degree assortativity coefficient", _fmt(s.degree_assortativity)),
        (
            "Top nodes by degree",
            ", ".join(f"{name} ({deg})" for name, deg in s.top_degree_nodes) or "-",
        ),
        (
            "Top nodes by degree (with parallels)",
            ", ".join(f"{name} ({deg})" for name, deg in s.top_degree_nodes_multi) or "-",
        ),
    ]


def stats_markdown(s: GraphStats) -> str:
    lines = ["| Graph Metric | Value |", "| --- | --- |"]
    lines += [f"| {k} | {v} |" for k, v in stats_rows(s)]
    return "\n".join(lines)


def stats_csv(s: GraphStats) -> str:
    lines = ["metric,value"]
    for k, v in stats_rows(s):
        escaped = v.replace('"', '""')
        lines.append(f'"{k}","{escaped}"')
    return "\n".join(lines)


# -- persistence --------------------------------------------------------------------


def _node_record(name: str, data: NodeData) -> dict:
    return {
        "kind": "node",
        "name": name,
        "canonical_name": data.entity.canonical_name,
        "surface_forms": sorted(data.entity.surface_forms),
        "first_chunk_id": data.entity.first_chunk_id,
        "source_chunk_ids": list(data.source_chunk_ids),
        "enrichment": record_to_json(data.enrichment) if data.enrichment else None,
    }


def _edge_record(t: Triplet) -> dict:
    return {
        "kind": "edge",
        "head": t.head,
        "relation": t.relation,
        "tail": t.tail,
        "source_chunk_id": t.source_chunk_id,
    }


def save(g: KnowledgeGraph, path: str | Path) -> None:
    """Write manifest header + one record per line (nodes, then edges)."""
    path = Path(path)
    body_lines = [json.dumps(_node_record(name, data), ensure_ascii=False, sort_keys=True) for name, data in g.nodes.items()]
    body_lines += [json.dumps(_edge_record(t), ensure_ascii=False, sort_keys=True) for t in g.edges]
    body = "\n".join(body_lines)
    checksum = hashlib.sha256(body.encode("utf-8")).hexdigest()
    header = json.dumps(
        {
            "schema": GRAPH_SCHEMA,
            "version": GRAPH_VERSION,
            "nodes": len(g.nodes),
            "edges": len(g.edges),
            "checksum": checksum,
        },
        sort_keys=True,
    )
    tmp = path.with_suffix(path.suffix + f".tmp.{os.getpid()}")
    tmp.write_text(header + ("\n" + body if body else "") + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load(path: str | Path) -> KnowledgeGraph:
    """Inverse of :func:`save`; raises :class:`CorruptFile` on any mismatch."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorruptFile(f"unreadable graph file: {exc}") from exc
    lines = raw.splitlines()
    if not lines:
        raise CorruptFile("empty graph file")
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise CorruptFile(f"bad header: {exc}") from exc
    if header.get("schema") != GRAPH_SCHEMA or header.get("version") != GRAPH_VERSION:
        raise CorruptFile(f"unsupported schema {header.get('schema')!r} v{header.get('version')!r}")
    body_lines = lines[1:]
    if len(body_lines) != header.get("nodes", 0) + header.get("edges", 0):
        raise CorruptFile(
            f"record count mismatch: header says {header.get('nodes')}+{header.get('edges')}, "
            f"file has {len(body_lines)}"
        )
    body = "\n".join(body_lines)
    checksum = hashlib.sha256(body.encode("utf-8")).hexdigest()
    if checksum != header.get("checksum"):
        raise CorruptFile("checksum mismatch")

    g = KnowledgeGraph()
    for line in body_lines:
        try:
            rec = json.loads(line)
        except ValueError as exc:
            raise CorruptFile(f"bad record: {exc}") from exc
        if rec.get("kind") == "node":
            entity = Entity(
                canonical_name=rec["canonical_name"],
                surface_forms=set(rec["surface_forms"]),
                first_chunk_id=rec["first_chunk_id"],
            )
            name = g._add_node(entity)
            node = g.nodes[name]
            node.source_chunk_ids = list(rec["source_chunk_ids"])
            if rec.get("enrichment"):
                node.enrichment = record_from_json(rec["enrichment"])
        elif rec.get("kind") == "edge":
            t = Triplet(
                head=rec["head"],
                relation=rec["relation"],
                tail=rec["tail"],
                source_chunk_id=rec["source_chunk_id"],
            )
            if g.resolve(t.head) is None or g.resolve(t.tail) is None:
                raise CorruptFile(f"edge references unknown node: {t!r}")
            g._add_edge(t)
        else:
            raise CorruptFile(f"unknown record kind {rec.get('kind')!r}")
    return g
