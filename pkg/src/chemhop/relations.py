"""Triplet extraction among verified entities of one chunk.

The model is asked for at most ``max_facts`` (entity1, relation, entity2)
tuples; its output is post-filtered so that every endpoint maps back to an
input entity, weak relations are dropped even if emitted, and head != tail.
Relation strings are kept verbatim apart from whitespace cleanup.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from . import prompts
from .entities import Entity
from .errors import MalformedOutput
from .gateway import ChatRequest, LlmGateway, parse_list
from .ingest import Chunk
from .textnorm import normalize_key

log = logging.getLogger(__name__)

DEFAULT_MAX_FACTS = 10

WEAK_RELATIONS = frozenset({"is", "are", "has", "exists", "relates to"})


@dataclass(frozen=True)
class Triplet:
    head: str
    relation: str
    tail: str
    source_chunk_id: str


def parse_triplet_list(text: str) -> list[tuple[str, str, str]]:
    """Accept a bracketed tuple list or a JSON array of 3-element arrays."""
    items = parse_list(text)
    triplets: list[tuple[str, str, str]] = []
    for item in items:
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            raise MalformedOutput(f"not a 3-tuple: {item!r}")
        if not all(isinstance(x, str) for x in item):
            raise MalformedOutput(f"non-string member in: {item!r}")
        triplets.append((item[0], item[1], item[2]))
    return triplets


def _clean_relation(relation: str) -> str:
    return " ".join(relation.split())


def extract_relations(
    entities: Sequence[Entity],
    chunk: Chunk,
    gateway: LlmGateway,
    model_id: str,
    max_facts: int = DEFAULT_MAX_FACTS,
    decode_params: Optional[dict] = None,
) -> list[Triplet]:
    """Extract up to ``max_facts`` triplets among *entities* from *chunk*."""
    if len(entities) < 2:
        return []
    by_key: dict[str, str] = {}
    for ent in entities:
        by_key[ent.key] = ent.canonical_name
        for surface in ent.surface_forms:
            by_key.setdefault(normalize_key(surface), ent.canonical_name)

    names = [e.canonical_name for e in entities]
    req = ChatRequest(
        model_id=model_id,
        system_text="",
        user_text=prompts.relation_extraction(names, chunk.text, max_facts),
        decode_params=decode_params or dict(temperature=0.0, max_output_tokens=1024),
        expect_structured=True,
    )
    raw, _ = gateway.complete_parsed(req, parse_triplet_list)

    triplets: list[Triplet] = []
    seen: set[tuple[str, str, str]] = set()
    for head_s, relation_s, tail_s in raw:
        relation = _clean_relation(relation_s)
        if relation.casefold() in WEAK_RELATIONS:
            log.debug("dropping weak relation %r", relation)
            continue
        head = by_key.get(normalize_key(head_s))
        tail = by_key.get(normalize_key(tail_s))
        if head is None or tail is None:
            log.debug("dropping triplet with unknown endpoint: %r", (head_s, relation_s, tail_s))
            continue
        if normalize_key(head) == normalize_key(tail):
            continue
        dedupe_key = (normalize_key(head), relation.casefold(), normalize_key(tail))
        if dedupe_key in seen:
            continue
        seen.add(dedupe_key)
        triplets.append(Triplet(head=head, relation=relation, tail=tail, source_chunk_id=chunk.chunk_id))
        if len(triplets) >= max_facts:
            break
    return triplets
