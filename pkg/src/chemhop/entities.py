"""Chemical entity detection and LLM verification.

Detection is delegated to a pluggable NER provider: either the in-process
lexicon matcher (offline, deterministic) or a remote HTTP service speaking
the ``POST /ner`` wire contract. Verification submits detected surfaces plus
their chunk to the entity-verification prompt and aligns the model's reply
back onto the input surfaces, so the model can remove or rename entities but
never invent them.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol

import requests

from . import prompts
from .errors import MalformedOutput, ProviderUnavailable
from .gateway import ChatRequest, LlmGateway, parse_list
from .ingest import Chunk
from .textnorm import canonical_name, normalize_key

log = logging.getLogger(__name__)


@dataclass
class EntitySpan:
    surface: str
    start: int
    end: int
    score: float = 1.0


@dataclass
class Entity:
    canonical_name: str
    surface_forms: set[str]
    first_chunk_id: str

    @property
    def key(self) -> str:
        return normalize_key(self.canonical_name)


class NerProvider(Protocol):
    def spans(self, text: str) -> list[EntitySpan]: ...

    def healthy(self) -> bool: ...


class LexiconNer:
    """Gazetteer matcher: case-insensitive whole-term occurrences of a term list.

    Returns every candidate occurrence (including overlapping ones); overlap
    resolution is detect()'s job.
    """

    def __init__(self, terms: Iterable[str]):
        self.terms = sorted({t.strip() for t in terms if t.strip()}, key=len, reverse=True)
        self._patterns = [
            re.compile(r"(?<![A-Za-z0-9])" + re.escape(t) + r"(?![A-Za-z0-9])", re.IGNORECASE)
            for t in self.terms
        ]

    @classmethod
    def from_file(cls, path: str | Path) -> "LexiconNer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)

    def spans(self, text: str) -> list[EntitySpan]:
        found: list[EntitySpan] = []
        for pattern in self._patterns:
            for m in pattern.finditer(text):
                found.append(EntitySpan(surface=text[m.start() : m.end()], start=m.start(), end=m.end()))
        return found

    def healthy(self) -> bool:
        return True


class HttpNer:
    """Client for the remote NER service wire contract."""

    def __init__(self, base_url: str, timeout_s: float = 30.0, session: Optional[requests.Session] = None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def spans(self, text: str) -> list[EntitySpan]:
        try:
            resp = self._session.post(f"{self.base_url}/ner", json={"text": text}, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"NER service unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderUnavailable(f"NER service returned {resp.status_code}")
        payload = resp.json()
        return [
            EntitySpan(surface=s["surface"], start=s["start"], end=s["end"], score=s.get("score", 1.0))
            for s in payload.get("spans", [])
        ]

    def healthy(self) -> bool:
        try:
            resp = self._session.get(f"{self.base_url}/health", timeout=self.timeout_s)
        except requests.RequestException:
            return False
        return resp.status_code == 200


def resolve_overlaps(spans: list[EntitySpan]) -> list[EntitySpan]:
    """Keep the longest span of each overlapping group (ties: leftmost, then score)."""
    ordered = sorted(spans, key=lambda s: (-(s.end - s.start), s.start, -s.score))
    kept: list[EntitySpan] = []
    for span in ordered:
        if all(span.end <= k.start or span.start >= k.end for k in kept):
            kept.append(span)
    return sorted(kept, key=lambda s: s.start)


def detect(chunk: Chunk, provider: NerProvider) -> list[EntitySpan]:
    """Run the NER provider over a chunk: sorted, overlap-resolved spans."""
    if not chunk.text:
        return []
    if not provider.healthy():
        raise ProviderUnavailable("NER provider is not healthy")
    spans = provider.spans(chunk.text)
    for s in spans:
        if not (0 <= s.start < s.end <= len(chunk.text)):
            raise ProviderUnavailable(f"provider returned invalid offsets {s.start}:{s.end}")
        if chunk.text[s.start : s.end] != s.surface:
            raise ProviderUnavailable(f"provider surface mismatch at {s.start}:{s.end}")
    return resolve_overlaps(spans)


def parse_entity_list(text: str) -> list[str]:
    items = parse_list(text)
    if not all(isinstance(x, str) for x in items):
        raise MalformedOutput("entity list contains non-string items")
    return items


def _align_to_inputs(returned: list[str], surfaces: list[str]) -> list[tuple[str, str]]:
    """Map each returned label to one input surface, in order.

    A label that normalizes equal to a not-yet-consumed surface is a keep; a
    label with no such match is treated as a canonicalized rename of the next
    unconsumed surface. Labels beyond the input count are dropped (the model
    may remove or rename, never invent).
    """
    keys = [normalize_key(s) for s in surfaces]
    consumed = [False] * len(surfaces)
    pointer = 0
    pairs: list[tuple[str, str]] = []
    for label in returned:
        label_key = normalize_key(label)
        match = None
        for i in range(len(surfaces)):
            if not consumed[i] and keys[i] == label_key:
                match = i
                break
        if match is None:
            # rename: attribute to the first unconsumed surface at/after pointer
            while pointer < len(surfaces) and consumed[pointer]:
                pointer += 1
            if pointer >= len(surfaces):
                log.debug("dropping hallucinated entity %r", label)
                continue
            match = pointer
        consumed[match] = True
        pairs.append((label, surfaces[match]))
    return pairs


def verify(
    spans: list[EntitySpan],
    chunk: Chunk,
    gateway: LlmGateway,
    model_id: str,
    decode_params: Optional[dict] = None,
) -> list[Entity]:
    """Filter and canonicalize detected spans through the verification prompt.

    Returns one :class:`Entity` per surviving input surface; duplicate mentions
    of the same surface collapse beforehand, and surfaces sharing a normalized
    canonical name merge.
    """
    if not spans:
        return []
    surfaces: list[str] = []
    for s in spans:
        if s.surface not in surfaces:
            surfaces.append(s.surface)
    req = ChatRequest(
        model_id=model_id,
        system_text="",
        user_text=prompts.entity_verification(surfaces, chunk.text),
        decode_params=decode_params or dict(temperature=0.0, max_output_tokens=1024),
        expect_structured=True,
    )
    returned, _ = gateway.complete_parsed(req, parse_entity_list)

    merged: dict[str, Entity] = {}
    for label, surface in _align_to_inputs(returned, surfaces):
        name = canonical_name(label)
        key = normalize_key(name)
        if key in merged:
            merged[key].surface_forms.add(surface)
        else:
            merged[key] = Entity(canonical_name=name, surface_forms={surface}, first_chunk_id=chunk.chunk_id)
    return list(merged.values())


def merge_entities(entities: Iterable[Entity]) -> dict[str, Entity]:
    """Merge entities across chunks by normalized canonical name."""
    merged: dict[str, Entity] = {}
    for ent in entities:
        key = ent.key
        if key in merged:
            merged[key].surface_forms |= ent.surface_forms
        else:
            merged[key] = Entity(
                canonical_name=ent.canonical_name,
                surface_forms=set(ent.surface_forms),
                first_chunk_id=ent.first_chunk_id,
            )
    return merged
