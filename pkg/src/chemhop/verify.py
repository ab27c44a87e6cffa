"""Multi-stage QA verification: LLM judges per hop and per path, deterministic
leak/length gates, consensus filtering, and rejection bookkeeping.

Verification only ever removes items; question and answer text are never
mutated here. Every dropped item ends up with exactly one (stage, reason)
pair in the drop log.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import prompts
from .errors import IncompleteRecords
from .gateway import ChatRequest, LlmGateway
from .ingest import Chunk
from .qagen import MAX_ANSWER_WORDS, MultiHopQA, OneHopQA
from .textnorm import contains_phrase, word_count

log = logging.getLogger(__name__)

STAGES = ("onehop", "path", "leak", "length", "final")
REASONS = (
    "multiple_valid_answers",
    "answer_in_question",
    "not_chemistry",
    "unanswerable",
    "overlong_answer",
    "malformed",
)

YES_NO_REMINDER = 'Provide only "yes" or "no" as your response.'


@dataclass
class Verdict:
    passed: bool
    stage: str
    reason: Optional[str] = None
    raw_judge_text: str = ""
    judge_cache_key: str = ""  # empty for deterministic (judge-free) gates

    def __post_init__(self):
        if self.passed and self.reason is not None:
            raise ValueError("a passing verdict carries no reason")


def parse_yes_no(text: str) -> Optional[bool]:
    """First alphabetic token, case-insensitive; None if neither yes nor no."""
    m = re.search(r"[A-Za-z]+", text)
    if not m:
        return None
    token = m.group(0).casefold()
    if token == "yes":
        return True
    if token == "no":
        return False
    return None


def _judge_yes_no(gateway: LlmGateway, req: ChatRequest) -> tuple[Optional[bool], str, str]:
    resp = gateway.complete(req)
    verdict = parse_yes_no(resp.text)
    if verdict is None:
        resp = gateway.complete(req.with_appended(YES_NO_REMINDER))
        verdict = parse_yes_no(resp.text)
    return verdict, resp.text, resp.cache_key


def verify_onehop(
    qa: OneHopQA,
    chunk: Chunk,
    gateway: LlmGateway,
    model_id: str,
    decode_params: Optional[dict] = None,
) -> Verdict:
    """Judge one sub-question for factuality, unambiguity, and answerability."""
    req = ChatRequest(
        model_id=model_id,
        system_text="",
        user_text=prompts.onehop_verification(qa.question, qa.answer, chunk.text),
        decode_params=decode_params or dict(temperature=0.0, max_output_tokens=64),
    )
    verdict, raw, key = _judge_yes_no(gateway, req)
    if verdict is None:
        return Verdict(passed=False, stage="onehop", reason="malformed", raw_judge_text=raw, judge_cache_key=key)
    if verdict:
        return Verdict(passed=True, stage="onehop", raw_judge_text=raw, judge_cache_key=key)
    return Verdict(passed=False, stage="onehop", reason="unanswerable", raw_judge_text=raw, judge_cache_key=key)


def render_path_text(m: MultiHopQA, chunks: dict[str, Chunk]) -> str:
    """Ordered rendering of a path's triplets and their source chunks."""
    blocks: list[str] = []
    for i, qa in enumerate(m.sub_qas, start=1):
        t = qa.triplet
        block = [f"Hop {i}: ({t.head}, {t.relation}, {t.tail})"]
        chunk = chunks.get(t.source_chunk_id)
        if chunk is not None:
            block.append(f"[Source {i}]: {chunk.text}")
        blocks.append("\n".join(block))
    return "\n\n".join(blocks)


def verify_path(
    m: MultiHopQA,
    path_text: str,
    gateway: LlmGateway,
    model_id: str,
    decode_params: Optional[dict] = None,
) -> Verdict:
    """Judge the aggregated question against the full path rendering."""
    if not path_text.strip():
        return Verdict(passed=False, stage="path", reason="unanswerable", raw_judge_text="")
    req = ChatRequest(
        model_id=model_id,
        system_text="",
        user_text=prompts.path_verification(m.question, m.answer, path_text),
        decode_params=decode_params or dict(temperature=0.0, max_output_tokens=64),
    )
    verdict, raw, key = _judge_yes_no(gateway, req)
    if verdict is None:
        return Verdict(passed=False, stage="path", reason="malformed", raw_judge_text=raw, judge_cache_key=key)
    if verdict:
        return Verdict(passed=True, stage="path", raw_judge_text=raw, judge_cache_key=key)
    return Verdict(passed=False, stage="path", reason="unanswerable", raw_judge_text=raw, judge_cache_key=key)


def leak_and_length_gate(m: MultiHopQA, max_answer_words: int = MAX_ANSWER_WORDS) -> Verdict:
    """Deterministic gate: no sub-answer in the question, answer kept short.

    Pure and idempotent; no model calls.
    """
    for qa in m.sub_qas:
        if contains_phrase(m.question, qa.answer):
            return Verdict(passed=False, stage="leak", reason="answer_in_question")
    if contains_phrase(m.question, m.answer):
        return Verdict(passed=False, stage="leak", reason="answer_in_question")
    if word_count(m.answer) > max_answer_words:
        return Verdict(passed=False, stage="length", reason="overlong_answer")
    return Verdict(passed=True, stage="final")


@dataclass
class DropRecord:
    item_id: str
    stage: str
    reason: str
    detail: str = ""
    judge_cache_key: str = ""


def consensus_filter(
    items: Sequence[MultiHopQA],
    records_by_model: dict[str, Sequence],
    drop_log: Optional[list[DropRecord]] = None,
) -> list[MultiHopQA]:
    """Drop items answered incorrectly by every evaluated model.

    ``records_by_model`` maps model id -> its eval records (anything with
    ``item_id`` and ``correct`` attributes). Requires at least two models,
    each covering every item, else :class:`IncompleteRecords`.
    """
    if len(records_by_model) < 2:
        raise IncompleteRecords(f"need records from >=2 models, got {len(records_by_model)}")
    outcomes_by_model: dict[str, dict[str, bool]] = {}
    for model_id, records in records_by_model.items():
        outcomes = {r.item_id: bool(r.correct) for r in records}
        missing = [item.path_id for item in items if item.path_id not in outcomes]
        if missing:
            raise IncompleteRecords(f"model {model_id!r} missing records for {len(missing)} items")
        outcomes_by_model[model_id] = outcomes

    kept: list[MultiHopQA] = []
    for item in items:
        tally = {model_id: outcomes[item.path_id] for model_id, outcomes in outcomes_by_model.items()}
        if any(tally.values()):
            kept.append(item)
        else:
            detail = ", ".join(f"{m}={'ok' if v else 'wrong'}" for m, v in sorted(tally.items()))
            log.info("consensus drop %s (%s)", item.path_id, detail)
            if drop_log is not None:
                drop_log.append(
                    DropRecord(item_id=item.path_id, stage="final", reason="multiple_valid_answers", detail=detail)
                )
    return kept


# -- expert annotation import -----------------------------------------------------

RATINGS = ("good", "ok", "poor")
CONFIDENCES = ("high", "low")


@dataclass
class Annotation:
    item_id: str
    rating: str
    confidence: str


def load_annotations(path: str | Path) -> list[Annotation]:
    """Read expert-review records: one JSON object per line.

    Fields: ``item_id``, ``rating`` in {good, ok, poor}, ``confidence`` in
    {high, low}. Raises ValueError on out-of-vocabulary values.
    """
    annotations: list[Annotation] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        rating = str(rec.get("rating", "")).casefold()
        confidence = str(rec.get("confidence", "")).casefold()
        if rating not in RATINGS:
            raise ValueError(f"line {lineno}: rating {rec.get('rating')!r} not in {RATINGS}")
        if confidence not in CONFIDENCES:
            raise ValueError(f"line {lineno}: confidence {rec.get('confidence')!r} not in {CONFIDENCES}")
        if not rec.get("item_id"):
            raise ValueError(f"line {lineno}: missing item_id")
        annotations.append(Annotation(item_id=str(rec["item_id"]), rating=rating, confidence=confidence))
    return annotations


def annotation_summary(annotations: Iterable[Annotation]) -> dict:
    """Counts and shares by rating among high-confidence annotations."""
    annotations = list(annotations)
    high = [a for a in annotations if a.confidence == "high"]
    counts = {rating: sum(1 for a in high if a.rating == rating) for rating in RATINGS}
    total_high = len(high)
    return {
        "total": len(annotations),
        "high_confidence": total_high,
        "dropped_low_confidence": len(annotations) - total_high,
        "counts": counts,
        "shares_pct": {
            rating: (100.0 * c / total_high if total_high else 0.0) for rating, c in counts.items()
        },
    }
