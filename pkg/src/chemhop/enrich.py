"""Entity enrichment from an encyclopedia summary endpoint and a chemical
compound database.

Both sources sit behind configurable base URLs so tests (and air-gapped runs)
can point at a local fixture server. Every lookup, hit or miss, is cached on
disk keyed by (source, normalized name): a fully cached run performs zero
network calls. Enrichment only ever adds metadata; canonical names are never
touched here.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional
from urllib.parse import quote

import requests

from .errors import AmbiguousName, SourceUnreachable
from .textnorm import normalize_key, validate_formula

log = logging.getLogger(__name__)

DEFAULT_RATE_PER_S = 5.0


@dataclass
class CompoundProfile:
    record_title: str
    synonyms: list[str] = field(default_factory=list)
    description: Optional[str] = None
    safety: list[str] = field(default_factory=list)
    canonical_smiles: Optional[str] = None
    molecular_formula: Optional[str] = None
    computed_properties: dict[str, str] = field(default_factory=dict)


@dataclass
class EnrichmentRecord:
    entity: str
    wiki_summary: Optional[str] = None
    compound: Optional[CompoundProfile] = None
    fetched_at: str = ""


def record_to_json(rec: EnrichmentRecord) -> dict:
    return asdict(rec)


def record_from_json(data: dict) -> EnrichmentRecord:
    compound = data.get("compound")
    return EnrichmentRecord(
        entity=data["entity"],
        wiki_summary=data.get("wiki_summary"),
        compound=CompoundProfile(**compound) if compound else None,
        fetched_at=data.get("fetched_at", ""),
    )


def render_enrichment(rec: EnrichmentRecord) -> str:
    """Prompt-facing rendering: summary, description, and formula lines."""
    lines: list[str] = []
    if rec.wiki_summary:
        lines.append(rec.wiki_summary.strip())
    if rec.compound:
        c = rec.compound
        if c.description:
            lines.append(c.description.strip())
        if c.molecular_formula:
            lines.append(f"Molecular formula: {c.molecular_formula}")
        if c.canonical_smiles:
            lines.append(f"Canonical SMILES: {c.canonical_smiles}")
        if c.safety:
            lines.append("Safety: " + "; ".join(c.safety))
    return "\n".join(lines)


class _RateGate:
    def __init__(self, rate_per_s: float):
        self._interval = 1.0 / rate_per_s if rate_per_s else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if not self._interval:
            return
        with self._lock:
            now = time.monotonic()
            pause = self._next - now
            self._next = max(now, self._next) + self._interval
        if pause > 0:
            time.sleep(pause)


class EnrichmentClient:
    """Fetches and caches summaries and compound profiles per entity."""

    def __init__(
        self,
        wiki_base: Optional[str] = None,
        compound_base: Optional[str] = None,
        cache_dir: Optional[str | Path] = None,
        rate_per_s: float = DEFAULT_RATE_PER_S,
        timeout_s: float = 20.0,
        on_ambiguous: str = "first",
        session: Optional[requests.Session] = None,
    ):
        self.wiki_base = wiki_base.rstrip("/") if wiki_base else None
        self.compound_base = compound_base.rstrip("/") if compound_base else None
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.timeout_s = timeout_s
        self.on_ambiguous = on_ambiguous
        self._session = session or requests.Session()
        self._gates = {"wiki": _RateGate(rate_per_s), "compound": _RateGate(rate_per_s)}

    # -- cache ---------------------------------------------------------------

    def _cache_path(self, source: str, name: str) -> Optional[Path]:
        if not self.cache_dir:
            return None
        digest = hashlib.sha256(f"{source}:{normalize_key(name)}".encode("utf-8")).hexdigest()
        return self.cache_dir / source / f"{digest}.json"

    def _cache_get(self, source: str, name: str) -> Optional[dict]:
        path = self._cache_path(source, name)
        if not path or not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (ValueError, OSError):
            return None

    def _cache_put(self, source: str, name: str, payload: dict) -> None:
        path = self._cache_path(source, name)
        if not path:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp.{os.getpid()}")
        tmp.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)

    def _get_json(self, source: str, url: str) -> tuple[int, Any]:
        self._gates[source].wait()
        try:
            resp = self._session.get(url, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise SourceUnreachable(f"{source} fetch failed: {exc}") from exc
        if resp.status_code == 404:
            return 404, None
        if resp.status_code != 200:
            raise SourceUnreachable(f"{source} returned status {resp.status_code}")
        try:
            return 200, resp.json()
        except ValueError as exc:
            raise SourceUnreachable(f"{source} returned non-JSON body") from exc

    # -- encyclopedia summaries ------------------------------------------------

    def wiki_summary(self, name: str) -> Optional[str]:
        """Lead summary of the page resolving for *name* (redirects followed)."""
        cached = self._cache_get("wiki", name)
        if cached is not None:
            return cached.get("summary")
        if not self.wiki_base:
            return None
        url = f"{self.wiki_base}/page/summary/{quote(name, safe='')}?redirect=true"
        status, payload = self._get_json("wiki", url)
        summary = None
        if status == 200 and isinstance(payload, dict):
            extract = payload.get("extract")
            if isinstance(extract, str) and extract.strip():
                summary = extract.strip()
        self._cache_put("wiki", name, {"summary": summary})
        return summary

    # -- compound database -----------------------------------------------------

    def _resolve_cid(self, name: str) -> Optional[int]:
        url = f"{self.compound_base}/rest/pug/compound/name/{quote(name, safe='')}/cids/JSON"
        status, payload = self._get_json("compound", url)
        if status != 200 or not isinstance(payload, dict):
            return None
        cids = (payload.get("IdentifierList") or {}).get("CID") or []
        if not cids:
            return None
        if len(cids) > 1:
            if self.on_ambiguous == "error":
                raise AmbiguousName(f"{name!r} resolved to {len(cids)} compound ids")
            log.debug("%r resolved to %d ids; taking the first", name, len(cids))
        return int(cids[0])

    def compound_profile(self, name: str) -> Optional[CompoundProfile]:
        """Name -> compound-id resolution, then record-view section extraction."""
        cached = self._cache_get("compound", name)
        if cached is not None:
            data = cached.get("profile")
            return CompoundProfile(**data) if data else None
        if not self.compound_base:
            return None
        profile = None
        cid = self._resolve_cid(name)
        if cid is not None:
            url = f"{self.compound_base}/rest/pug_view/data/compound/{cid}/JSON"
            status, payload = self._get_json("compound", url)
            if status == 200 and isinstance(payload, dict):
                profile = _parse_record_view(payload)
        self._cache_put("compound", name, {"profile": asdict(profile) if profile else None})
        return profile

    def enrich(self, name: str) -> Optional[EnrichmentRecord]:
        """Combined record; omitted (None) when neither source knows the name.

        The assembled record is cached whole so ``fetched_at`` keeps the time
        of the actual fetch across warm re-runs.
        """
        cached = self._cache_get("record", name)
        if cached is not None:
            data = cached.get("record")
            return record_from_json(data) if data else None
        summary = self.wiki_summary(name)
        profile = self.compound_profile(name)
        record = None
        if summary is not None or profile is not None:
            record = EnrichmentRecord(
                entity=name,
                wiki_summary=summary,
                compound=profile,
                fetched_at=datetime.now(timezone.utc).isoformat(),
            )
        self._cache_put("record", name, {"record": record_to_json(record) if record else None})
        return record


# -- record-view parsing --------------------------------------------------------
#
# The compound database serves a hierarchical record: nested sections addressed
# by heading, each carrying Information entries whose values are either marked-up
# strings or numbers with units.


def _iter_sections(node: dict):
    for section in node.get("Section", []) or []:
        yield section
        yield from _iter_sections(section)


def _find_section(record: dict, heading: str) -> Optional[dict]:
    for section in _iter_sections(record):
        if section.get("TOCHeading") == heading:
            return section
    return None


def _info_strings(section: Optional[dict]) -> list[str]:
    out: list[str] = []
    if not section:
        return out
    for info in section.get("Information", []) or []:
        value = info.get("Value") or {}
        for swm in value.get("StringWithMarkup", []) or []:
            s = swm.get("String")
            if s:
                out.append(s)
    return out


def _info_pairs(section: Optional[dict]) -> dict[str, str]:
    """Name -> rendered "value unit" map from a section's Information entries."""
    out: dict[str, str] = {}
    if not section:
        return out
    for info in section.get("Information", []) or []:
        name = info.get("Name")
        if not name:
            continue
        value = info.get("Value") or {}
        rendered: Optional[str] = None
        strings = [s.get("String") for s in value.get("StringWithMarkup", []) or [] if s.get("String")]
        if strings:
            rendered = strings[0]
        elif value.get("Number"):
            rendered = " ".join(str(n) for n in value["Number"])
        if rendered is None:
            continue
        unit = value.get("Unit")
        out[name] = f"{rendered} {unit}".strip() if unit else rendered
    return out


def _parse_record_view(payload: dict) -> Optional[CompoundProfile]:
    record = payload.get("Record")
    if not isinstance(record, dict):
        return None
    title = record.get("RecordTitle") or ""

    description = None
    desc_strings = _info_strings(_find_section(record, "Record Description"))
    if desc_strings:
        description = " ".join(desc_strings)

    synonyms: list[str] = []
    syn_section = _find_section(record, "Synonyms")
    if syn_section:
        for sub in _iter_sections(syn_section):
            synonyms.extend(_info_strings(sub))
        synonyms.extend(_info_strings(syn_section))
    # preserve order, drop dups
    synonyms = list(dict.fromkeys(synonyms))

    safety = _info_strings(_find_section(record, "Chemical Safety"))

    smiles = None
    descriptors = _find_section(record, "Computed Descriptors")
    if descriptors:
        for heading in ("Canonical SMILES", "SMILES"):
            smiles_strings = _info_strings(_find_section(descriptors, heading))
            if smiles_strings:
                smiles = smiles_strings[0]
                break

    formula = None
    formula_strings = _info_strings(_find_section(record, "Molecular Formula"))
    if formula_strings:
        candidate = formula_strings[0].strip()
        if validate_formula(candidate):
            formula = candidate
        else:
            log.warning("discarding malformed molecular formula %r for %r", candidate, title)

    computed = _info_pairs(_find_section(record, "Computed Properties"))

    return CompoundProfile(
        record_title=title,
        synonyms=synonyms,
        description=description,
        safety=safety,
        canonical_smiles=smiles,
        molecular_formula=formula,
        computed_properties=computed,
    )
