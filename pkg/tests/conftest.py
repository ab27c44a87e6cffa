"""Shared fixtures: a tiny local HTTP server for source/enrichment endpoints,
graph builders, and scripted-gateway helpers."""

from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlparse

import pytest

from chemhop.entities import Entity
from chemhop.gateway import LlmGateway, ScriptedProvider
from chemhop.graph import KnowledgeGraph, build
from chemhop.ingest import Chunk
from chemhop.relations import Triplet


def make_chunk(chunk_id: str, text: str, doc_id: str = "", ordinal: int = 0) -> Chunk:
    return Chunk(
        chunk_id=chunk_id,
        doc_id=doc_id or chunk_id.split("#")[0],
        ordinal=ordinal,
        text=text,
        word_count=len(text.split()),
    )


def make_entity(name: str, chunk_id: str = "doc#c0", surfaces=None) -> Entity:
    return Entity(canonical_name=name, surface_forms=set(surfaces or [name]), first_chunk_id=chunk_id)


def triplet(head: str, tail: str, source: str, relation: str = "reacts with") -> Triplet:
    return Triplet(head=head, relation=relation, tail=tail, source_chunk_id=source)


def graph_from_edges(edges: list[tuple[str, str, str]], extra_nodes: list[str] = ()) -> KnowledgeGraph:
    """Edges as (head, tail, source_chunk_id) triples; entities derived."""
    names: dict[str, None] = {}
    for h, t, _ in edges:
        names.setdefault(h)
        names.setdefault(t)
    for n in extra_nodes:
        names.setdefault(n)
    entities = [make_entity(n, chunk_id=f"{n}-home") for n in names]
    triplets = [triplet(h, t, src) for h, t, src in edges]
    return build(entities, [], triplets)


def random_fixture_graph(rng: random.Random, n_nodes: int, n_edges: int) -> KnowledgeGraph:
    """Random multigraph with per-edge sources; may contain isolated nodes."""
    names = [f"n{i:03d}" for i in range(n_nodes)]
    edges = []
    for e in range(n_edges):
        u, v = rng.sample(names, 2)
        edges.append((u, v, f"src{e:04d}"))
    return graph_from_edges(edges, extra_nodes=names)


def scripted_gateway(script: dict | None = None, **gateway_kwargs) -> tuple[LlmGateway, ScriptedProvider]:
    provider = ScriptedProvider(script or {})
    return LlmGateway(provider, **gateway_kwargs), provider


class _FixtureHandler(BaseHTTPRequestHandler):
    """Serves canned JSON; routes are resolved by the owning server."""

    def do_GET(self):  # noqa: N802 (http.server API)
        self._respond()

    def do_POST(self):  # noqa: N802
        self._respond()

    def _respond(self):
        parsed = urlparse(self.path)
        route = unquote(parsed.path)
        self.server.requests.append(route)  # type: ignore[attr-defined]
        handler = self.server.routes.get(route)  # type: ignore[attr-defined]
        if handler is None:
            self.send_response(404)
            self.end_headers()
            self.wfile.write(b"{}")
            return
        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        status, payload = handler(query) if callable(handler) else (200, handler)
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):  # silence test output
        pass


class FixtureServer:
    def __init__(self):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _FixtureHandler)
        self.httpd.routes = {}
        self.httpd.requests = []
        self.thread = threading.Thread(
            target=lambda: self.httpd.serve_forever(poll_interval=0.02), daemon=True
        )
        self.thread.start()

    @property
    def base_url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self) -> list[str]:
        return self.httpd.requests

    def route(self, path: str, handler) -> None:
        """handler: dict payload, or callable(query) -> (status, payload)."""
        self.httpd.routes[path] = handler

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def fixture_server():
    server = FixtureServer()
    yield server
    server.close()
