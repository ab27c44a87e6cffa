"""Corpus ingestion: fetch redistributable articles, isolate introduction
windows, and segment them into paragraph-respecting word-bounded chunks.

A "word" is a maximal run of non-whitespace characters; paragraphs are
blank-line separated. Oversize paragraphs are never split — they become their
own chunk, flagged, so downstream prompts can tolerate them.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Optional

import requests

from .errors import NoIntroductionFound, SchemaMismatch, SourceUnreachable
from .textnorm import word_count

log = logging.getLogger(__name__)

INTRO_WORD_LIMIT = 500
CHUNK_WORD_LIMIT = 128

DEFAULT_INTRO_PATTERNS = [
    r"^\s*(?:\d+[\.\)]?\s*)?introduction\b",
    r"^\s*(?:[ivx]+[\.\)]\s*)?introduction\b",
]

# A line that looks like the start of the *next* section ends the intro region.
DEFAULT_SECTION_END_PATTERNS = [
    r"^\s*\d+[\.\)]?\s+\S+",
    r"^\s*(?:background|related works?|results?|methods?|discussion|conclusions?"
    r"|experimental|materials|acknowledg(?:e)?ments?|references)\b",
]


@dataclass
class Document:
    doc_id: str
    title: str
    license: str
    body_text: str
    retrieved_at: str


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    word_count: int
    oversize: bool = False


@dataclass
class SourceConfig:
    """Paged REST article source: URL plus a field mapping into item JSON."""

    url: str
    license_allow: list[str]
    items_path: str = "items"
    fields: dict[str, str] = field(
        default_factory=lambda: {
            "doc_id": "id",
            "title": "title",
            "license": "license",
            "body_text": "text",
        }
    )
    page_param: str = "page"
    start_page: int = 1
    page_size_param: Optional[str] = "limit"
    page_size: int = 50
    page_cap: Optional[int] = None
    timeout_s: float = 30.0


def _dig(obj: Any, dotted: str) -> Any:
    cur = obj
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def fetch_articles(source: SourceConfig, session: Optional[requests.Session] = None) -> list[Document]:
    """Pull every page of *source*, keeping only allow-listed licenses.

    Pagination stops when a page returns fewer items than ``page_size`` (or
    none), or when ``page_cap`` pages have been fetched.
    """
    session = session or requests.Session()
    allow = {lic.casefold() for lic in source.license_allow}
    docs: list[Document] = []
    page = source.start_page
    pages_fetched = 0
    while True:
        if source.page_cap is not None and pages_fetched >= source.page_cap:
            break
        params = {source.page_param: page}
        if source.page_size_param:
            params[source.page_size_param] = source.page_size
        try:
            resp = session.get(source.url, params=params, timeout=source.timeout_s)
            resp.raise_for_status()
            payload = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise SourceUnreachable(f"article source failed on page {page}: {exc}") from exc
        items = _dig(payload, source.items_path)
        if items is None:
            raise SchemaMismatch(f"response has no '{source.items_path}' field")
        if not isinstance(items, list):
            raise SchemaMismatch(f"'{source.items_path}' is not a list")
        pages_fetched += 1
        for item in items:
            row = {}
            for name, path in source.fields.items():
                value = _dig(item, path)
                if value is None:
                    raise SchemaMismatch(f"item missing required field '{path}'")
                row[name] = value
            if str(row["license"]).casefold() not in allow:
                log.debug("skipping %s: license %r not allow-listed", row["doc_id"], row["license"])
                continue
            docs.append(
                Document(
                    doc_id=str(row["doc_id"]),
                    title=str(row["title"]),
                    license=str(row["license"]),
                    body_text=str(row["body_text"]),
                    retrieved_at=datetime.now(timezone.utc).isoformat(),
                )
            )
        if len(items) < source.page_size or not items:
            break
        page += 1
    return docs


def split_paragraphs(text: str) -> list[str]:
    return [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]


def _pack_paragraphs(paragraphs: Iterable[str], max_words: int) -> list[str]:
    """Greedy packing of whole paragraphs into ≤max_words groups.

    Returns group texts (paragraphs joined by blank lines). A paragraph longer
    than the limit forms a group of its own.
    """
    groups: list[list[str]] = []
    current: list[str] = []
    current_words = 0
    for para in paragraphs:
        pw = word_count(para)
        if pw > max_words:
            if current:
                groups.append(current)
                current, current_words = [], 0
            groups.append([para])
            continue
        if current and current_words + pw > max_words:
            groups.append(current)
            current, current_words = [], 0
        current.append(para)
        current_words += pw
    if current:
        groups.append(current)
    return ["\n\n".join(g) for g in groups]


def extract_intro_window(
    doc: Document,
    max_words: int = INTRO_WORD_LIMIT,
    header_patterns: Optional[list[str]] = None,
    section_end_patterns: Optional[list[str]] = None,
    fallback: Optional[str] = None,
) -> str:
    """Locate the introduction and truncate it at whole-paragraph granularity.

    The window keeps whole paragraphs while the cumulative word count stays
    within ``max_words``; if even the first paragraph exceeds the limit it is
    returned whole. ``fallback="head"`` uses the start of the body when no
    header pattern matches; otherwise :class:`NoIntroductionFound` is raised.
    """
    if not doc.body_text.strip():
        raise NoIntroductionFound(f"document {doc.doc_id} has empty body")
    header_res = [re.compile(p, re.IGNORECASE) for p in (header_patterns or DEFAULT_INTRO_PATTERNS)]
    end_res = [re.compile(p, re.IGNORECASE) for p in (section_end_patterns or DEFAULT_SECTION_END_PATTERNS)]

    lines = doc.body_text.splitlines()
    start_line = None
    for i, line in enumerate(lines):
        if any(r.search(line) for r in header_res):
            start_line = i + 1
            break
    if start_line is None:
        if fallback == "head":
            region = doc.body_text
        else:
            raise NoIntroductionFound(f"no introduction header matched in {doc.doc_id}")
    else:
        end_line = len(lines)
        for j in range(start_line, len(lines)):
            stripped = lines[j].strip()
            if stripped and any(r.search(stripped) for r in end_res):
                end_line = j
                break
        region = "\n".join(lines[start_line:end_line])

    paragraphs = split_paragraphs(region)
    if not paragraphs:
        raise NoIntroductionFound(f"introduction region of {doc.doc_id} is empty")

    kept: list[str] = []
    total = 0
    for para in paragraphs:
        pw = word_count(para)
        if kept and total + pw > max_words:
            break
        if not kept and pw > max_words:
            return para  # nothing fits: first paragraph, whole
        kept.append(para)
        total += pw
    return "\n\n".join(kept)


def chunk(text: str, doc_id: str = "", max_words: int = CHUNK_WORD_LIMIT) -> list[Chunk]:
    """Segment *text* into chunks of whole paragraphs, ≤ ``max_words`` each.

    A single paragraph over the limit becomes its own oversize-flagged chunk.
    Concatenating chunk texts in ordinal order reproduces the input paragraphs
    in order.
    """
    chunks: list[Chunk] = []
    for ordinal, group in enumerate(_pack_paragraphs(split_paragraphs(text), max_words)):
        wc = word_count(group)
        chunks.append(
            Chunk(
                chunk_id=f"{doc_id}#c{ordinal}",
                doc_id=doc_id,
                ordinal=ordinal,
                text=group,
                word_count=wc,
                oversize=wc > max_words,
            )
        )
    return chunks
