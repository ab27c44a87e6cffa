"""One-hop question generation and reverse-chained multi-hop aggregation.

For a triplet (entity1, relation, entity2) the one-hop question asks for the
entity holding the relation to entity2; entity1 is the answer and must not
appear in the question. Aggregation feeds the sub-questions to the chaining
prompt in Q1..Qn order, where Q1's answer is the final answer of the
multi-hop item.

Failure policy: one retry per failure class (malformed output, answer
mismatch, answer leak) with a corrective line appended — the appended text
also changes the gateway cache key, so a cached bad reply is never replayed —
then a typed error so the caller can discard the path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import prompts
from .errors import AnswerLeak, AnswerMismatch, ChainBroken, MalformedOutput
from .gateway import ChatRequest, LlmGateway, parse_structured
from .ingest import Chunk
from .relations import Triplet
from .textnorm import contains_phrase, normalize_key

log = logging.getLogger(__name__)

MAX_ANSWER_WORDS = 8


@dataclass
class OneHopQA:
    question: str
    answer: str
    triplet: Triplet
    used_metadata: bool = False
    prompt_cache_key: str = ""  # gateway address of the reply that produced this


@dataclass
class MultiHopQA:
    question: str
    answer: str
    sub_qas: list[OneHopQA]
    hop_count: int
    shortcut_count: int = 0
    path_id: str = ""
    context_chunk_ids: list[str] = field(default_factory=list)
    prompt_cache_key: str = ""  # empty for single-hop pass-through items


def orient_forward(
    nodes: Sequence[str], edges: Sequence[Triplet]
) -> Optional[tuple[list[str], list[Triplet]]]:
    """Orient a sampled path so every triplet's head is the earlier node.

    Chain coherence requires edge i's head to equal nodes[i]; a path whose
    stored edge directions disagree in both traversal directions cannot be
    chained and yields None (the caller discards it).
    """

    def all_forward(ns, es) -> bool:
        return all(normalize_key(e.head) == normalize_key(ns[i]) for i, e in enumerate(es))

    if all_forward(nodes, edges):
        return list(nodes), list(edges)
    rev_nodes, rev_edges = list(reversed(nodes)), list(reversed(edges))
    if all_forward(rev_nodes, rev_edges):
        return rev_nodes, rev_edges
    return None


def _parse_qa_object(text: str) -> tuple[str, str]:
    obj = parse_structured(text)
    q = obj.get("q")
    a = obj.get("a")
    if not isinstance(q, str) or not isinstance(a, str) or not q.strip() or not a.strip():
        raise MalformedOutput('expected keys "q" and "a" with non-empty strings')
    return q.strip(), a.strip()


def _complete_qa(gateway: LlmGateway, req: ChatRequest) -> tuple[str, str, str]:
    (q, a), resp = gateway.complete_parsed(req, _parse_qa_object)
    return q, a, resp.cache_key


SPECIFICITY_REMINDER = (
    "The previous question mentioned the answer. Rephrase so the answer string does not "
    "appear anywhere in the question; add descriptions from the text or the Entity1 "
    "information to keep it specific."
)

MISMATCH_REMINDER = 'The value of "a" must be exactly Entity1.'

FINAL_ANSWER_REMINDER = 'The value of "a" must be exactly the answer to Q1.'

AGGREGATE_LEAK_REMINDER = (
    "The previous question contained one of the sub-answers. Rephrase the multi-hop "
    "question so that none of the answers appear in it."
)


def gen_onehop(
    t: Triplet,
    chunk: Chunk,
    gateway: LlmGateway,
    model_id: str,
    meta: Optional[str] = None,
    decode_params: Optional[dict] = None,
) -> OneHopQA:
    """Generate a one-hop question for *t* grounded in its source chunk.

    Raises :class:`AnswerMismatch` when the model's answer is not the head
    entity, :class:`AnswerLeak` when the answer string survives in the
    question after one retry, :class:`MalformedOutput` when no q/a object can
    be parsed.
    """
    if t.source_chunk_id != chunk.chunk_id:
        raise ValueError(f"triplet source {t.source_chunk_id!r} is not chunk {chunk.chunk_id!r}")
    req = ChatRequest(
        model_id=model_id,
        system_text="",
        user_text=prompts.onehop_generation(t.head, t.relation, t.tail, chunk.text, meta),
        decode_params=decode_params or dict(temperature=0.0, max_output_tokens=1024),
        expect_structured=True,
    )
    q, a, key = _complete_qa(gateway, req)

    if normalize_key(a) != normalize_key(t.head):
        q, a, key = _complete_qa(gateway, req.with_appended(MISMATCH_REMINDER))
        if normalize_key(a) != normalize_key(t.head):
            raise AnswerMismatch(f"model answered {a!r}, expected head {t.head!r}")

    if contains_phrase(q, a):
        q, a, key = _complete_qa(gateway, req.with_appended(SPECIFICITY_REMINDER))
        if normalize_key(a) != normalize_key(t.head):
            raise AnswerMismatch(f"retry answered {a!r}, expected head {t.head!r}")
        if contains_phrase(q, a):
            raise AnswerLeak(f"answer {a!r} still occurs in question after retry")

    return OneHopQA(question=q, answer=a, triplet=t, used_metadata=meta is not None,
                    prompt_cache_key=key)


def _check_chain(sub_qas: Sequence[OneHopQA]) -> None:
    for i in range(1, len(sub_qas)):
        prev = sub_qas[i - 1].triplet
        answer_key = normalize_key(sub_qas[i].answer)
        if answer_key not in (normalize_key(prev.head), normalize_key(prev.tail)):
            raise ChainBroken(
                f"sub-answer {sub_qas[i].answer!r} is not an entity of the previous triplet "
                f"({prev.head!r}, {prev.tail!r})"
            )


def _context_chunk_ids(sub_qas: Sequence[OneHopQA]) -> list[str]:
    ids: list[str] = []
    for qa in sub_qas:
        if qa.triplet.source_chunk_id not in ids:
            ids.append(qa.triplet.source_chunk_id)
    return ids


def _leaked_answer(question: str, sub_qas: Sequence[OneHopQA]) -> Optional[str]:
    for qa in sub_qas:
        if contains_phrase(question, qa.answer):
            return qa.answer
    return None


def aggregate(
    sub_qas: Sequence[OneHopQA],
    gateway: LlmGateway,
    model_id: str,
    path_id: str = "",
    shortcut_count: int = 0,
    decode_params: Optional[dict] = None,
) -> MultiHopQA:
    """Merge a path's one-hop questions into one multi-hop item.

    A single sub-question passes through unchanged. The final answer is always
    the first sub-question's answer; a model reply violating that is retried
    once and then rejected as malformed.
    """
    if not sub_qas:
        raise ValueError("sub_qas must be non-empty")
    _check_chain(sub_qas)
    if len(sub_qas) == 1:
        only = sub_qas[0]
        return MultiHopQA(
            question=only.question,
            answer=only.answer,
            sub_qas=list(sub_qas),
            hop_count=1,
            shortcut_count=shortcut_count,
            path_id=path_id,
            context_chunk_ids=_context_chunk_ids(sub_qas),
        )

    final_answer = sub_qas[0].answer
    req = ChatRequest(
        model_id=model_id,
        system_text="",
        user_text=prompts.multihop_aggregation([(qa.question, qa.answer) for qa in sub_qas]),
        decode_params=decode_params or dict(temperature=0.0, max_output_tokens=1024),
        expect_structured=True,
    )
    q, a, key = _complete_qa(gateway, req)

    if normalize_key(a) != normalize_key(final_answer):
        q, a, key = _complete_qa(gateway, req.with_appended(FINAL_ANSWER_REMINDER))
        if normalize_key(a) != normalize_key(final_answer):
            raise MalformedOutput(f"aggregated answer {a!r} is not the first sub-answer {final_answer!r}")

    leaked = _leaked_answer(q, sub_qas)
    if leaked is not None:
        q, a, key = _complete_qa(gateway, req.with_appended(AGGREGATE_LEAK_REMINDER))
        if normalize_key(a) != normalize_key(final_answer):
            raise MalformedOutput(f"retry answer {a!r} is not the first sub-answer {final_answer!r}")
        leaked = _leaked_answer(q, sub_qas)
        if leaked is not None:
            raise AnswerLeak(f"sub-answer {leaked!r} still occurs in the question after retry")

    return MultiHopQA(
        question=q,
        answer=a,
        sub_qas=list(sub_qas),
        hop_count=len(sub_qas),
        shortcut_count=shortcut_count,
        path_id=path_id,
        context_chunk_ids=_context_chunk_ids(sub_qas),
        prompt_cache_key=key,
    )
