"""Pipeline stages: each reads the previous stage's artifacts from the work
directory, writes its own, and records a manifest (config hash, seed, cache
stats). Stages communicate only via files so any run is resumable and
inspectable.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from . import prompts
from .config import ModelAssignment, RunConfig
from .entities import Entity, HttpNer, LexiconNer, NerProvider, detect, verify
from .enrich import EnrichmentClient, EnrichmentRecord, record_from_json, record_to_json, render_enrichment
from .errors import (
    AnswerLeak,
    AnswerMismatch,
    ChainBroken,
    ChemhopError,
    ConfigInvalid,
    MalformedOutput,
    MissingInput,
)
from .evalharness import EvalRecord, EvalSetup, make_llm_judge, report, report_csv, report_markdown, run_eval
from .gateway import Budget, LlmGateway, OpenAIChatProvider, ScriptedProvider
from .graph import build, load, save, stats, stats_csv, stats_markdown
from .ingest import Chunk, Document, SourceConfig, chunk as chunk_text, extract_intro_window, fetch_articles
from .qagen import MultiHopQA, OneHopQA, aggregate, gen_onehop, orient_forward
from .relations import Triplet, extract_relations
from .records import load_records, write_records
from .sampler import PathSample, sample_paths
from .verify import DropRecord, annotation_summary, leak_and_length_gate, load_annotations, render_path_text, verify_onehop, verify_path

log = logging.getLogger(__name__)

ARTIFACTS = {
    "documents": "documents.jsonl",
    "chunks": "chunks.jsonl",
    "entities": "entities.jsonl",
    "triplets": "triplets.jsonl",
    "enrichment": "enrichment.jsonl",
    "graph": "graph.kg",
    "paths": "paths.jsonl",
    "qa": "qa_raw.jsonl",
    "qa_drops": "qa_drops.jsonl",
    "dataset": "dataset.jsonl",
    "dataset_drops": "dataset_drops.jsonl",
}


def artifact_path(cfg: RunConfig, name: str) -> Path:
    return cfg.workdir / ARTIFACTS[name]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(cfg: RunConfig, stage: str, started_at: str, extra: Optional[dict] = None) -> None:
    manifest = {
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "prompt_version": prompts.PROMPT_VERSION,
        "started_at": started_at,
        "finished_at": _now(),
    }
    manifest.update(extra or {})
    path = cfg.workdir / f"{stage}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def build_gateway(cfg: RunConfig, assignment: ModelAssignment, mock_llm: Optional[str] = None) -> LlmGateway:
    """Gateway for a model role; ``mock_llm`` swaps in the scripted responder."""
    if mock_llm:
        provider = ScriptedProvider.from_file(mock_llm)
        provider_cfg = None
    else:
        provider_cfg = cfg.provider_for(assignment.provider)
        provider = OpenAIChatProvider(
            base_url=provider_cfg.base_url,
            api_key_env=provider_cfg.api_key_env,
            name=assignment.provider,
        )
    limits = cfg.limits
    budget = None
    if limits.get("max_requests") or limits.get("max_total_tokens"):
        budget = Budget(
            max_requests=limits.get("max_requests"),
            max_total_tokens=limits.get("max_total_tokens"),
        )
    return LlmGateway(
        provider,
        cache_dir=cfg.cache_dir / "llm",
        max_retries=provider_cfg.max_retries if provider_cfg else 3,
        max_inflight=provider_cfg.max_inflight if provider_cfg else 8,
        rate_per_s=provider_cfg.rate_per_s if provider_cfg else None,
        budget=budget,
    )


def _workers(cfg: RunConfig) -> int:
    return int(cfg.limits.get("workers", 4))


def build_ner_provider(cfg: RunConfig) -> NerProvider:
    kind = cfg.ner.get("provider", "lexicon")
    if kind == "lexicon":
        lexicon_path = cfg.ner.get("lexicon_path")
        if not lexicon_path:
            raise ConfigInvalid("ner.provider=lexicon requires ner.lexicon_path")
        return LexiconNer.from_file(lexicon_path)
    if kind == "http":
        base = cfg.ner.get("base_url")
        if not base:
            raise ConfigInvalid("ner.provider=http requires ner.base_url")
        return HttpNer(base)
    raise ConfigInvalid(f"unknown ner.provider {kind!r}")


# -- (de)serialization of domain objects -----------------------------------------


def _doc_record(d: Document) -> dict:
    return {
        "doc_id": d.doc_id,
        "title": d.title,
        "license": d.license,
        "body_text": d.body_text,
        "retrieved_at": d.retrieved_at,
    }


def _doc_from(rec: dict) -> Document:
    return Document(**rec)


def _chunk_record(c: Chunk) -> dict:
    return {
        "chunk_id": c.chunk_id,
        "doc_id": c.doc_id,
        "ordinal": c.ordinal,
        "text": c.text,
        "word_count": c.word_count,
        "oversize": c.oversize,
    }


def _chunk_from(rec: dict) -> Chunk:
    return Chunk(**rec)


def _triplet_record(t: Triplet) -> dict:
    return {"head": t.head, "relation": t.relation, "tail": t.tail, "source_chunk_id": t.source_chunk_id}


def _triplet_from(rec: dict) -> Triplet:
    return Triplet(**rec)


def _path_id(sample: PathSample) -> str:
    basis = "|".join(sample.nodes) + "||" + "|".join(e.source_chunk_id for e in sample.edges)
    return "p" + hashlib.sha256(basis.encode("utf-8")).hexdigest()[:12]


def _path_record(sample: PathSample) -> dict:
    return {
        "path_id": _path_id(sample),
        "k": sample.k,
        "nodes": sample.nodes,
        "edges": [_triplet_record(e) for e in sample.edges],
        "shortcut_count": sample.shortcut_count,
        "seed_trace": sample.seed_trace,
    }


def qa_item_record(item: MultiHopQA) -> dict:
    return {
        "id": item.path_id,
        "question": item.question,
        "answer": item.answer,
        "hop_count": item.hop_count,
        "context_chunk_ids": item.context_chunk_ids,
        "shortcut_count": item.shortcut_count,
        "prompt_cache_key": item.prompt_cache_key,
        "sub_qas": [
            {
                "question": qa.question,
                "answer": qa.answer,
                "triplet": _triplet_record(qa.triplet),
                "used_metadata": qa.used_metadata,
                "prompt_cache_key": qa.prompt_cache_key,
            }
            for qa in item.sub_qas
        ],
    }


def qa_item_from(rec: dict) -> MultiHopQA:
    sub_qas = [
        OneHopQA(
            question=s["question"],
            answer=s["answer"],
            triplet=_triplet_from(s["triplet"]),
            used_metadata=s.get("used_metadata", False),
            prompt_cache_key=s.get("prompt_cache_key", ""),
        )
        for s in rec.get("sub_qas", [])
    ]
    return MultiHopQA(
        question=rec["question"],
        answer=rec["answer"],
        sub_qas=sub_qas,
        hop_count=rec["hop_count"],
        shortcut_count=rec.get("shortcut_count", 0),
        path_id=rec["id"],
        context_chunk_ids=list(rec.get("context_chunk_ids", [])),
        prompt_cache_key=rec.get("prompt_cache_key", ""),
    )


def load_chunks(cfg: RunConfig) -> dict[str, Chunk]:
    return {rec["chunk_id"]: _chunk_from(rec) for rec in load_records(artifact_path(cfg, "chunks"), "chunks")}


def load_dataset(cfg: RunConfig) -> list[MultiHopQA]:
    return [qa_item_from(rec) for rec in load_records(artifact_path(cfg, "dataset"), "dataset")]


# -- stages ------------------------------------------------------------------------


def stage_ingest(cfg: RunConfig) -> dict:
    started = _now()
    source = cfg.source
    if not source.get("url"):
        raise ConfigInvalid("source.url is required for ingest")
    if not cfg.license_allow:
        raise ConfigInvalid("a license allow-list is required for ingest")
    src = SourceConfig(
        url=source["url"],
        license_allow=cfg.license_allow,
        items_path=source.get("items_path", "items"),
        fields=dict(source.get("fields") or SourceConfig(url="", license_allow=[]).fields),
        page_param=source.get("page_param", "page"),
        start_page=int(source.get("start_page", 1)),
        page_size_param=source.get("page_size_param", "limit"),
        page_size=int(source.get("page_size", 50)),
        page_cap=source.get("page_cap"),
    )
    docs = fetch_articles(src)

    intro_cfg = cfg.intro
    chunks: list[Chunk] = []
    kept_docs: list[Document] = []
    for doc in docs:
        try:
            window = extract_intro_window(
                doc,
                max_words=int(intro_cfg.get("max_words", 500)),
                header_patterns=intro_cfg.get("header_patterns"),
                fallback=intro_cfg.get("fallback"),
            )
        except ChemhopError as exc:
            log.warning("skipping %s: %s", doc.doc_id, exc)
            continue
        kept_docs.append(doc)
        chunks.extend(chunk_text(window, doc_id=doc.doc_id, max_words=int(cfg.chunking.get("max_words", 128))))

    cfg.workdir.mkdir(parents=True, exist_ok=True)
    write_records(artifact_path(cfg, "documents"), "documents", (_doc_record(d) for d in kept_docs))
    write_records(artifact_path(cfg, "chunks"), "chunks", (_chunk_record(c) for c in chunks))
    summary = {"documents": len(kept_docs), "chunks": len(chunks)}
    write_manifest(cfg, "ingest", started, summary)
    return summary


def stage_extract_entities(cfg: RunConfig, mock_llm: Optional[str] = None) -> dict:
    started = _now()
    chunks = load_chunks(cfg)
    provider = build_ner_provider(cfg)
    assignment = cfg.model_for("entity_verifier")
    gateway = build_gateway(cfg, assignment, mock_llm)

    def process(c: Chunk) -> list[Entity]:
        spans = detect(c, provider)
        if not spans:
            return []
        try:
            return verify(spans, c, gateway, assignment.model_id, decode_params=assignment.decode_params or None)
        except MalformedOutput as exc:
            log.warning("entity verification failed for %s: %s", c.chunk_id, exc)
            return []

    ordered = [chunks[k] for k in sorted(chunks)]
    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        per_chunk = list(pool.map(process, ordered))

    rows = []
    for c, ents in zip(ordered, per_chunk):
        for ent in ents:
            rows.append(
                {
                    "canonical_name": ent.canonical_name,
                    "surface_forms": sorted(ent.surface_forms),
                    "chunk_id": c.chunk_id,
                }
            )
    write_records(artifact_path(cfg, "entities"), "entities", rows)
    summary = {"chunks": len(ordered), "entities": len(rows),
               "cache": {"hits": gateway.cache_hits, "misses": gateway.cache_misses}}
    write_manifest(cfg, "extract-entities", started, summary)
    return summary


def _load_entities(cfg: RunConfig) -> list[tuple[str, Entity]]:
    """(chunk_id, entity) pairs as persisted by extract-entities."""
    out = []
    for rec in load_records(artifact_path(cfg, "entities"), "entities"):
        out.append(
            (
                rec["chunk_id"],
                Entity(
                    canonical_name=rec["canonical_name"],
                    surface_forms=set(rec["surface_forms"]),
                    first_chunk_id=rec["chunk_id"],
                ),
            )
        )
    return out


def stage_extract_relations(cfg: RunConfig, mock_llm: Optional[str] = None) -> dict:
    started = _now()
    chunks = load_chunks(cfg)
    by_chunk: dict[str, list[Entity]] = {}
    for chunk_id, ent in _load_entities(cfg):
        by_chunk.setdefault(chunk_id, []).append(ent)
    assignment = cfg.model_for("relation_extractor")
    gateway = build_gateway(cfg, assignment, mock_llm)
    max_facts = int(cfg.qa.get("max_facts", 10))

    def process(chunk_id: str) -> list[Triplet]:
        ents = by_chunk.get(chunk_id, [])
        if len(ents) < 2:
            return []
        try:
            return extract_relations(
                ents, chunks[chunk_id], gateway, assignment.model_id,
                max_facts=max_facts, decode_params=assignment.decode_params or None,
            )
        except MalformedOutput as exc:
            log.warning("relation extraction failed for %s: %s", chunk_id, exc)
            return []

    ordered_ids = sorted(chunks)
    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        per_chunk = list(pool.map(process, ordered_ids))
    triplets = [t for group in per_chunk for t in group]
    write_records(artifact_path(cfg, "triplets"), "triplets", (_triplet_record(t) for t in triplets))
    summary = {"triplets": len(triplets),
               "cache": {"hits": gateway.cache_hits, "misses": gateway.cache_misses}}
    write_manifest(cfg, "extract-relations", started, summary)
    return summary


def stage_enrich(cfg: RunConfig) -> dict:
    started = _now()
    names: list[str] = []
    for _, ent in _load_entities(cfg):
        if ent.canonical_name not in names:
            names.append(ent.canonical_name)
    client = EnrichmentClient(
        wiki_base=cfg.enrich.get("wiki_base"),
        compound_base=cfg.enrich.get("compound_base"),
        cache_dir=cfg.cache_dir / "enrich",
        rate_per_s=float(cfg.enrich.get("rate_per_s", 5.0)),
    )

    def process(name: str) -> Optional[EnrichmentRecord]:
        try:
            return client.enrich(name)
        except ChemhopError as exc:
            log.warning("enrichment failed for %r: %s", name, exc)
            return None

    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        results = list(pool.map(process, names))
    rows = [record_to_json(rec) for rec in results if rec is not None]
    write_records(artifact_path(cfg, "enrichment"), "enrichment", rows)
    summary = {"entities": len(names), "enriched": len(rows)}
    write_manifest(cfg, "enrich", started, summary)
    return summary


def stage_build_graph(cfg: RunConfig) -> dict:
    started = _now()
    pairs = _load_entities(cfg)
    entity_chunks: dict[str, list[str]] = {}
    for chunk_id, ent in pairs:
        entity_chunks.setdefault(ent.key, []).append(chunk_id)
    enrichments = []
    enrich_path = artifact_path(cfg, "enrichment")
    if enrich_path.exists():
        enrichments = [record_from_json(rec) for rec in load_records(enrich_path, "enrichment")]
    triplets = [_triplet_from(rec) for rec in load_records(artifact_path(cfg, "triplets"), "triplets")]
    g = build((ent for _, ent in pairs), enrichments, triplets, entity_chunks=entity_chunks)
    save(g, artifact_path(cfg, "graph"))
    summary = {"nodes": len(g.nodes), "edges": len(g.edges)}
    write_manifest(cfg, "build-graph", started, summary)
    return summary


def stage_graph_stats(cfg: RunConfig) -> tuple[dict, str]:
    started = _now()
    g = load(artifact_path(cfg, "graph"))
    s = stats(g)
    markdown = stats_markdown(s)
    (cfg.workdir / "graph_stats.md").write_text(markdown + "\n", encoding="utf-8")
    (cfg.workdir / "graph_stats.csv").write_text(stats_csv(s) + "\n", encoding="utf-8")
    summary = {"nodes": s.node_count, "edges": s.edge_count}
    write_manifest(cfg, "graph-stats", started, summary)
    return summary, markdown


def _source_of(cfg: RunConfig, chunks: dict[str, Chunk]) -> Callable[[Triplet], str]:
    scope = cfg.sampler.get("distinct_source_scope", "document")
    if scope == "chunk":
        return lambda t: t.source_chunk_id
    if scope == "document":
        doc_of = {chunk_id: c.doc_id for chunk_id, c in chunks.items()}
        return lambda t: doc_of.get(t.source_chunk_id, t.source_chunk_id)
    raise ConfigInvalid(f"sampler.distinct_source_scope must be chunk|document, got {scope!r}")


def stage_sample_paths(cfg: RunConfig, seed: Optional[int] = None) -> dict:
    started = _now()
    if seed is None:
        seed = cfg.sampler.get("seed")
    if seed is None:
        raise ConfigInvalid("a seed is mandatory for sampling runs (sampler.seed or --seed)")
    seed = int(seed)
    g = load(artifact_path(cfg, "graph"))
    chunks = load_chunks(cfg)
    source_of = _source_of(cfg, chunks)
    k_min = int(cfg.sampler.get("k_min", 1))
    k_max = int(cfg.sampler.get("k_max", 4))
    per_k = int(cfg.sampler.get("per_k", 50))

    rows = []
    found_per_k = {}
    for k in range(k_min, k_max + 1):
        try:
            samples = sample_paths(g, k=k, n=per_k, seed=seed + k, max_k=k_max, source_of=source_of)
        except ChemhopError as exc:
            log.warning("no paths for k=%d: %s", k, exc)
            samples = []
        found_per_k[k] = len(samples)
        rows.extend(_path_record(s) for s in samples)
    write_records(artifact_path(cfg, "paths"), "paths", rows)
    summary = {"seed": seed, "paths": len(rows), "per_k": found_per_k}
    write_manifest(cfg, "sample-paths", started, summary)
    return summary


def stage_gen_qa(cfg: RunConfig, mock_llm: Optional[str] = None) -> dict:
    """Generate one-hop questions per path edge, verify each, aggregate.

    A sub-question failing verification is regenerated once with enrichment
    metadata before the whole path is discarded.
    """
    started = _now()
    chunks = load_chunks(cfg)
    paths = load_records(artifact_path(cfg, "paths"), "paths")
    enrichment: dict[str, EnrichmentRecord] = {}
    enrich_path = artifact_path(cfg, "enrichment")
    if enrich_path.exists():
        for rec_json in load_records(enrich_path, "enrichment"):
            rec = record_from_json(rec_json)
            enrichment[rec.entity] = rec

    gen = cfg.model_for("generator")
    ver = cfg.model_for("verifier")
    gen_gateway = build_gateway(cfg, gen, mock_llm)
    ver_gateway = build_gateway(cfg, ver, mock_llm)

    def gen_verified_onehop(t: Triplet) -> Optional[OneHopQA]:
        chunk = chunks.get(t.source_chunk_id)
        if chunk is None:
            raise MissingInput(f"chunk {t.source_chunk_id} not found for triplet")
        qa = gen_onehop(t, chunk, gen_gateway, gen.model_id, meta=None,
                        decode_params=gen.decode_params or None)
        verdict = verify_onehop(qa, chunk, ver_gateway, ver.model_id)
        if verdict.passed:
            return qa
        # verifier said no: one regeneration with metadata, if any is available
        meta_rec = enrichment.get(t.head)
        meta = render_enrichment(meta_rec) if meta_rec else None
        if meta:
            qa = gen_onehop(t, chunk, gen_gateway, gen.model_id, meta=meta,
                            decode_params=gen.decode_params or None)
            verdict = verify_onehop(qa, chunk, ver_gateway, ver.model_id)
            if verdict.passed:
                return qa
        return None

    def process(path_rec: dict) -> tuple[Optional[MultiHopQA], Optional[DropRecord]]:
        path_id = path_rec["path_id"]
        oriented = orient_forward(path_rec["nodes"], [_triplet_from(e) for e in path_rec["edges"]])
        if oriented is None:
            return None, DropRecord(item_id=path_id, stage="onehop", reason="malformed",
                                    detail="no chain-coherent orientation")
        _, triplets = oriented
        sub_qas: list[OneHopQA] = []
        try:
            for t in triplets:
                qa = gen_verified_onehop(t)
                if qa is None:
                    return None, DropRecord(item_id=path_id, stage="onehop", reason="unanswerable")
                sub_qas.append(qa)
            item = aggregate(
                sub_qas, gen_gateway, gen.model_id,
                path_id=path_id, shortcut_count=path_rec["shortcut_count"],
                decode_params=gen.decode_params or None,
            )
            return item, None
        except (MalformedOutput, AnswerMismatch, ChainBroken) as exc:
            return None, DropRecord(item_id=path_id, stage="onehop", reason="malformed", detail=str(exc))
        except AnswerLeak as exc:
            return None, DropRecord(item_id=path_id, stage="leak", reason="answer_in_question", detail=str(exc))

    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        results = list(pool.map(process, paths))
    items = [item for item, _ in results if item is not None]
    drops = [drop for _, drop in results if drop is not None]

    write_records(artifact_path(cfg, "qa"), "qa", (qa_item_record(i) for i in items))
    write_records(
        artifact_path(cfg, "qa_drops"), "droplog",
        ({"item_id": d.item_id, "stage": d.stage, "reason": d.reason, "detail": d.detail,
          "judge_cache_key": d.judge_cache_key} for d in drops),
    )
    summary = {
        "paths": len(paths), "items": len(items), "dropped": len(drops),
        "cache": {
            "hits": gen_gateway.cache_hits + ver_gateway.cache_hits,
            "misses": gen_gateway.cache_misses + ver_gateway.cache_misses,
        },
    }
    write_manifest(cfg, "gen-qa", started, summary)
    return summary


def stage_verify_qa(cfg: RunConfig, mock_llm: Optional[str] = None) -> dict:
    """Final verification round: deterministic gates, then the path judge."""
    started = _now()
    chunks = load_chunks(cfg)
    items = [qa_item_from(rec) for rec in load_records(artifact_path(cfg, "qa"), "qa")]
    ver = cfg.model_for("verifier")
    gateway = build_gateway(cfg, ver, mock_llm)
    max_answer_words = int(cfg.qa.get("max_answer_words", 8))

    kept: list[MultiHopQA] = []
    drops: list[DropRecord] = []
    for item in items:
        gate = leak_and_length_gate(item, max_answer_words=max_answer_words)
        if not gate.passed:
            drops.append(DropRecord(item_id=item.path_id, stage=gate.stage, reason=gate.reason or ""))
            continue
        verdict = verify_path(item, render_path_text(item, chunks), gateway, ver.model_id)
        if not verdict.passed:
            drops.append(DropRecord(item_id=item.path_id, stage=verdict.stage, reason=verdict.reason or "",
                                    detail=verdict.raw_judge_text[:200],
                                    judge_cache_key=verdict.judge_cache_key))
            continue
        kept.append(item)

    write_records(artifact_path(cfg, "dataset"), "dataset", (qa_item_record(i) for i in kept))
    write_records(
        artifact_path(cfg, "dataset_drops"), "droplog",
        ({"item_id": d.item_id, "stage": d.stage, "reason": d.reason, "detail": d.detail,
          "judge_cache_key": d.judge_cache_key} for d in drops),
    )
    summary = {"items_in": len(items), "kept": len(kept), "dropped": len(drops),
               "cache": {"hits": gateway.cache_hits, "misses": gateway.cache_misses}}
    write_manifest(cfg, "verify-qa", started, summary)
    return summary


def stage_evaluate(
    cfg: RunConfig,
    model_id: str,
    with_context: bool,
    provider: str = "default",
    run_id: Optional[str] = None,
    mock_llm: Optional[str] = None,
) -> dict:
    started = _now()
    dataset = load_dataset(cfg)
    if not dataset:
        raise MissingInput("dataset is empty; run verify-qa first")
    chunks = load_chunks(cfg)
    chunk_texts = {cid: c.text for cid, c in chunks.items()}

    assignment = ModelAssignment(model_id=model_id, provider=provider)
    gateway = build_gateway(cfg, assignment, mock_llm)
    judge_assignment = cfg.model_for("judge")
    judge_gateway = build_gateway(cfg, judge_assignment, mock_llm)
    judge = make_llm_judge(judge_gateway, judge_assignment.model_id)

    setup = EvalSetup(model_id=model_id, with_context=with_context)
    if run_id:
        setup.run_id = run_id
    records = run_eval(dataset, setup, gateway, chunk_texts=chunk_texts, judge=judge)

    run_dir = cfg.workdir / "runs" / setup.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    write_records(
        run_dir / "records.jsonl",
        "eval-records",
        (
            {
                "item_id": r.item_id,
                "prediction": r.prediction,
                "exact_match": r.exact_match,
                "judged_correct": r.judged_correct,
                "correct": r.correct,
                "latency_s": r.latency_s,
                "input_tokens": r.input_tokens,
                "output_tokens": r.output_tokens,
                "note": r.note,
            }
            for r in records
        ),
    )
    rep = report(records, dataset, chunk_texts)
    (run_dir / "report.md").write_text(report_markdown(rep, model_id, with_context) + "\n", encoding="utf-8")
    (run_dir / "report.csv").write_text(report_csv(rep, model_id, with_context) + "\n", encoding="utf-8")
    manifest = {
        "run_id": setup.run_id,
        "model_id": model_id,
        "with_context": with_context,
        "correctness_rate_pct": rep.correctness_rate_pct,
        "items": rep.total_items,
        "cache": {"hits": gateway.cache_hits + judge_gateway.cache_hits,
                  "misses": gateway.cache_misses + judge_gateway.cache_misses},
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(cfg, "evaluate", started, manifest)
    return manifest


def stage_report(cfg: RunConfig, run_id: str) -> tuple[dict, str]:
    started = _now()
    run_dir = cfg.workdir / "runs" / run_id
    records = [
        EvalRecord(
            item_id=rec["item_id"],
            prediction=rec["prediction"],
            exact_match=rec["exact_match"],
            judged_correct=rec.get("judged_correct"),
            correct=rec["correct"],
            latency_s=rec["latency_s"],
            input_tokens=rec["input_tokens"],
            output_tokens=rec["output_tokens"],
            note=rec.get("note"),
        )
        for rec in load_records(run_dir / "records.jsonl", "eval-records")
    ]
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    dataset = load_dataset(cfg)
    chunks = load_chunks(cfg)
    chunk_texts = {cid: c.text for cid, c in chunks.items()}
    rep = report(records, dataset, chunk_texts)
    markdown = report_markdown(rep, manifest.get("model_id", ""), manifest.get("with_context"))
    (run_dir / "report.md").write_text(markdown + "\n", encoding="utf-8")
    (run_dir / "report.csv").write_text(
        report_csv(rep, manifest.get("model_id", ""), manifest.get("with_context")) + "\n", encoding="utf-8"
    )
    summary = {"run_id": run_id, "correctness_rate_pct": rep.correctness_rate_pct}
    write_manifest(cfg, "report", started, summary)
    return summary, markdown


def stage_annotate_import(cfg: RunConfig, file: str) -> dict:
    started = _now()
    annotations = load_annotations(file)
    dataset_ids = {item.path_id for item in load_dataset(cfg)}
    unknown = [a.item_id for a in annotations if a.item_id not in dataset_ids]
    if unknown:
        log.warning("%d annotations reference unknown item ids (e.g. %s)", len(unknown), unknown[:3])
    summary = annotation_summary(annotations)
    summary["unknown_item_ids"] = len(unknown)
    out = cfg.workdir / "annotations_summary.json"
    out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(cfg, "annotate-import", started, {"annotations": len(annotations)})
    return summary
