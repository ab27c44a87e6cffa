"""Model evaluation over the QA dataset: context-provided and context-free
runs, exact-match grading with LLM-judge fallback, and report computation.

Latency per record is the wall clock of the successful model call (retries
excluded). All means and standard deviations are population statistics.
Token counts for dataset statistics use a pluggable tokenizer (default:
whitespace words), so absolute token figures are tokenizer-relative.
"""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import prompts
from .errors import MalformedOutput, ProviderRejected, ProviderUnreachable
from .gateway import ChatRequest, LlmGateway, parse_structured
from .qagen import MultiHopQA
from .textnorm import normalize_key

log = logging.getLogger(__name__)

Tokenizer = Callable[[str], int]


def whitespace_tokenizer(text: str) -> int:
    return len(text.split())


@dataclass
class EvalSetup:
    model_id: str
    with_context: bool
    decode_params: dict = field(default_factory=lambda: dict(temperature=0.0, max_output_tokens=1024))
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)


@dataclass
class EvalRecord:
    item_id: str
    prediction: str
    exact_match: bool
    judged_correct: Optional[bool]
    correct: bool
    latency_s: float
    input_tokens: int
    output_tokens: int
    note: Optional[str] = None


@dataclass
class DatasetStats:
    question_count: int
    question_chars_mean: float
    question_chars_sd: float
    question_tokens_mean: float
    question_tokens_sd: float
    answer_chars_mean: float
    answer_chars_sd: float
    answer_tokens_mean: float
    answer_tokens_sd: float
    hops_mean: float
    hops_sd: float
    context_chars_mean: float
    context_chars_sd: float
    context_tokens_mean: float
    context_tokens_sd: float
    hop_chars_mean: float
    hop_chars_sd: float
    hop_tokens_mean: float
    hop_tokens_sd: float
    shortcut_mean: float
    shortcut_sd: float
    hop_histogram: dict[int, int]
    shortcut_question_count: int
    shortcut_question_share_pct: float


@dataclass
class Report:
    correctness_rate_pct: float
    avg_duration_s: float
    avg_input_tokens: float
    avg_output_tokens: float
    total_items: int
    total_correct: int
    total_input_tokens: int
    total_output_tokens: int
    per_hop: dict[int, float]
    dataset_stats: DatasetStats


def normalize_answer(text: str) -> str:
    return normalize_key(text)


JudgeFn = Callable[[str, str, str], Optional[bool]]


def make_llm_judge(gateway: LlmGateway, model_id: str, decode_params: Optional[dict] = None) -> JudgeFn:
    """Binary CORRECT/INCORRECT judge over (question, gold, prediction)."""

    def judge(question: str, gold: str, prediction: str) -> Optional[bool]:
        req = ChatRequest(
            model_id=model_id,
            system_text=prompts.JUDGE_SYSTEM_TEXT,
            user_text=prompts.judge_user_text(question, gold, prediction),
            decode_params=decode_params or dict(temperature=0.0, max_output_tokens=16),
        )

        def attempt(r: ChatRequest) -> Optional[bool]:
            token = gateway.complete(r).text.strip().split()
            word = token[0].strip(".,!").casefold() if token else ""
            if word == "correct":
                return True
            if word == "incorrect":
                return False
            return None

        verdict = attempt(req)
        if verdict is None:
            verdict = attempt(req.with_appended("Reply with exactly one word: CORRECT or INCORRECT."))
        return verdict

    return judge


def grade(prediction: str, gold: str, judge: Optional[JudgeFn], question: str = "") -> tuple[bool, Optional[bool]]:
    """(exact_match, judged_correct). The judge is consulted only on mismatch.

    judged_correct is None on exact match; a judge that stays malformed after
    its retry yields False (flagged by the caller).
    """
    if normalize_answer(prediction) == normalize_answer(gold):
        return True, None
    if judge is None:
        return False, False
    return False, judge(question, gold, prediction)


def render_context(item: MultiHopQA, chunk_texts: dict[str, str]) -> str:
    blocks = []
    for i, chunk_id in enumerate(item.context_chunk_ids, start=1):
        blocks.append(f"[Source {i}] {chunk_texts.get(chunk_id, '')}")
    return "\n\n".join(blocks)


def run_eval(
    dataset: Sequence[MultiHopQA],
    setup: EvalSetup,
    gateway: LlmGateway,
    chunk_texts: Optional[dict[str, str]] = None,
    judge: Optional[JudgeFn] = None,
) -> list[EvalRecord]:
    """One record per item; per-item failures are recorded, never raised."""
    if setup.with_context and chunk_texts is None:
        raise ValueError("with_context runs need chunk_texts")
    records: list[EvalRecord] = []
    for item in dataset:
        context = render_context(item, chunk_texts) if setup.with_context else None
        req = ChatRequest(
            model_id=setup.model_id,
            system_text=prompts.ANSWER_SYSTEM_TEXT,
            user_text=prompts.answer_user_text(item.question, context),
            decode_params=dict(setup.decode_params),
            expect_structured=True,
        )
        note = None
        try:
            resp = gateway.complete(req)
        except (ProviderUnreachable, ProviderRejected) as exc:
            # per-item failure: recorded as incorrect, run continues
            records.append(
                EvalRecord(
                    item_id=item.path_id, prediction="", exact_match=False,
                    judged_correct=False, correct=False, latency_s=0.0,
                    input_tokens=0, output_tokens=0, note=f"provider_failure: {exc}",
                )
            )
            continue
        try:
            obj = parse_structured(resp.text)
            prediction = str(obj.get("answer", "")).strip()
            if not prediction:
                raise MalformedOutput("empty answer field")
        except MalformedOutput as exc:
            prediction = ""
            note = f"malformed_output: {exc}"
        if note is None:
            exact, judged = grade(prediction, item.answer, judge, question=item.question)
            if not exact and judged is None:
                judged = False
                note = "judge_malformed"
        else:
            exact, judged = False, False
        records.append(
            EvalRecord(
                item_id=item.path_id,
                prediction=prediction,
                exact_match=exact,
                judged_correct=judged,
                correct=True if exact else bool(judged),
                latency_s=resp.latency_s,
                input_tokens=resp.input_tokens,
                output_tokens=resp.output_tokens,
                note=note,
            )
        )
    return records


def _mean_sd(values: Iterable[float]) -> tuple[float, float]:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return 0.0, 0.0
    return float(arr.mean()), float(arr.std())  # population SD


def dataset_stats(
    dataset: Sequence[MultiHopQA],
    chunk_texts: Optional[dict[str, str]] = None,
    tokenizer: Tokenizer = whitespace_tokenizer,
) -> DatasetStats:
    """Dataset-level statistics over questions, answers, hops, and contexts."""
    chunk_texts = chunk_texts or {}
    q_chars = [len(item.question) for item in dataset]
    q_tokens = [tokenizer(item.question) for item in dataset]
    a_chars = [len(item.answer) for item in dataset]
    a_tokens = [tokenizer(item.answer) for item in dataset]
    hops = [item.hop_count for item in dataset]
    shortcuts = [item.shortcut_count for item in dataset]

    # total = per-question sum over its context chunks; pooled = each hop chunk once
    ctx_chars, ctx_tokens, hop_chars, hop_tokens = [], [], [], []
    for item in dataset:
        texts = [chunk_texts.get(cid, "") for cid in item.context_chunk_ids]
        ctx_chars.append(sum(len(t) for t in texts))
        ctx_tokens.append(sum(tokenizer(t) for t in texts))
        hop_chars.extend(len(t) for t in texts)
        hop_tokens.extend(tokenizer(t) for t in texts)

    histogram: dict[int, int] = {}
    for h in hops:
        histogram[h] = histogram.get(h, 0) + 1
    with_shortcut = sum(1 for s in shortcuts if s >= 1)

    qc_m, qc_s = _mean_sd(q_chars)
    qt_m, qt_s = _mean_sd(q_tokens)
    ac_m, ac_s = _mean_sd(a_chars)
    at_m, at_s = _mean_sd(a_tokens)
    h_m, h_s = _mean_sd(hops)
    cc_m, cc_s = _mean_sd(ctx_chars)
    ct_m, ct_s = _mean_sd(ctx_tokens)
    hc_m, hc_s = _mean_sd(hop_chars)
    ht_m, ht_s = _mean_sd(hop_tokens)
    s_m, s_s = _mean_sd(shortcuts)

    count = len(dataset)
    return DatasetStats(
        question_count=count,
        question_chars_mean=qc_m,
        question_chars_sd=qc_s,
        question_tokens_mean=qt_m,
        question_tokens_sd=qt_s,
        answer_chars_mean=ac_m,
        answer_chars_sd=ac_s,
        answer_tokens_mean=at_m,
        answer_tokens_sd=at_s,
        hops_mean=h_m,
        hops_sd=h_s,
        context_chars_mean=cc_m,
        context_chars_sd=cc_s,
        context_tokens_mean=ct_m,
        context_tokens_sd=ct_s,
        hop_chars_mean=hc_m,
        hop_chars_sd=hc_s,
        hop_tokens_mean=ht_m,
        hop_tokens_sd=ht_s,
        shortcut_mean=s_m,
        shortcut_sd=s_s,
        hop_histogram=histogram,
        shortcut_question_count=with_shortcut,
        shortcut_question_share_pct=(100.0 * with_shortcut / count) if count else 0.0,
    )


def report(
    records: Sequence[EvalRecord],
    dataset: Sequence[MultiHopQA],
    chunk_texts: Optional[dict[str, str]] = None,
    tokenizer: Tokenizer = whitespace_tokenizer,
) -> Report:
    """Pure aggregation of run records plus dataset statistics."""
    if not records:
        raise ValueError("records must be non-empty")
    by_id = {item.path_id: item for item in dataset}
    total = len(records)
    correct = sum(1 for r in records if r.correct)

    per_hop_totals: dict[int, list[int]] = {}
    for r in records:
        item = by_id.get(r.item_id)
        if item is None:
            continue
        bucket = per_hop_totals.setdefault(item.hop_count, [0, 0])
        bucket[0] += 1
        bucket[1] += 1 if r.correct else 0
    per_hop = {h: 100.0 * c / t for h, (t, c) in sorted(per_hop_totals.items())}

    return Report(
        correctness_rate_pct=100.0 * correct / total,
        avg_duration_s=float(np.mean([r.latency_s for r in records])),
        avg_input_tokens=float(np.mean([r.input_tokens for r in records])),
        avg_output_tokens=float(np.mean([r.output_tokens for r in records])),
        total_items=total,
        total_correct=correct,
        total_input_tokens=sum(r.input_tokens for r in records),
        total_output_tokens=sum(r.output_tokens for r in records),
        per_hop=per_hop,
        dataset_stats=dataset_stats(dataset, chunk_texts, tokenizer),
    )


# -- rendering ---------------------------------------------------------------------


def _dataset_rows(s: DatasetStats) -> list[tuple[str, str, str]]:
    def f(x: float) -> str:
        return f"{x:.2f}"

    rows = [
        ("Question length (chars)", f(s.question_chars_mean), f(s.question_chars_sd)),
        ("Question length (tokens)", f(s.question_tokens_mean), f(s.question_tokens_sd)),
        ("Answer length (chars)", f(s.answer_chars_mean), f(s.answer_chars_sd)),
        ("Answer length (tokens)", f(s.answer_tokens_mean), f(s.answer_tokens_sd)),
        ("Mean # hops per question", f(s.hops_mean), f(s.hops_sd)),
        ("Total context length (chars)", f(s.context_chars_mean), f(s.context_chars_sd)),
        ("Total context length (tokens)", f(s.context_tokens_mean), f(s.context_tokens_sd)),
        ("Hop length (chars, pooled)", f(s.hop_chars_mean), f(s.hop_chars_sd)),
        ("Hop length (tokens, pooled)", f(s.hop_tokens_mean), f(s.hop_tokens_sd)),
        ("Shortcut count per question", f(s.shortcut_mean), f(s.shortcut_sd)),
    ]
    return rows


def dataset_stats_markdown(s: DatasetStats) -> str:
    lines = ["| QA Metric | Mean | Std. Dev. |", "| --- | --- | --- |"]
    lines += [f"| {name} | {mean} | {sd} |" for name, mean, sd in _dataset_rows(s)]
    lines.append(f"| Hop-count distribution (of {s.question_count} questions) | | |")
    for hop in sorted(s.hop_histogram):
        count = s.hop_histogram[hop]
        share = 100.0 * count / s.question_count if s.question_count else 0.0
        lines.append(f"| {hop} hop{'s' if hop != 1 else ''} | {count} ({share:.1f}%) | |")
    lines.append(
        f"| Questions w/ >=1 shortcut | {s.shortcut_question_count} "
        f"({s.shortcut_question_share_pct:.1f}%) | |"
    )
    return "\n".join(lines)


def report_markdown(r: Report, model_id: str = "", with_context: Optional[bool] = None) -> str:
    header = ["| Model | Context | Correctness Rate (%) | Avg Duration (s) | Avg Input Tokens "
              "| Avg Output Tokens | Total Input Tokens (K) | Total Output Tokens (K) |",
              "| --- | --- | --- | --- | --- | --- | --- | --- |"]
    ctx = "" if with_context is None else ("yes" if with_context else "no")
    header.append(
        f"| {model_id} | {ctx} | {r.correctness_rate_pct:.2f} | {r.avg_duration_s:.2f} "
        f"| {r.avg_input_tokens:.0f} | {r.avg_output_tokens:.0f} "
        f"| {r.total_input_tokens / 1000:.2f} | {r.total_output_tokens / 1000:.2f} |"
    )
    per_hop = ["", "| Hops | Correctness Rate (%) |", "| --- | --- |"]
    per_hop += [f"| {h} | {rate:.2f} |" for h, rate in r.per_hop.items()]
    return "\n".join(header + per_hop + ["", dataset_stats_markdown(r.dataset_stats)])


def report_csv(r: Report, model_id: str = "", with_context: Optional[bool] = None) -> str:
    ctx = "" if with_context is None else ("yes" if with_context else "no")
    lines = [
        "model,context,correctness_rate_pct,avg_duration_s,avg_input_tokens,avg_output_tokens,"
        "total_input_tokens,total_output_tokens,total_items,total_correct",
        f"{model_id},{ctx},{r.correctness_rate_pct:.4f},{r.avg_duration_s:.6f},"
        f"{r.avg_input_tokens:.4f},{r.avg_output_tokens:.4f},"
        f"{r.total_input_tokens},{r.total_output_tokens},{r.total_items},{r.total_correct}",
        "",
        "hops,correctness_rate_pct",
    ]
    lines += [f"{h},{rate:.4f}" for h, rate in r.per_hop.items()]
    s = r.dataset_stats
    lines += ["", "qa_metric,mean,sd"]
    lines += [f"{name.replace(',', ';')},{mean},{sd}" for name, mean, sd in _dataset_rows(s)]
    lines.append(f"questions_with_shortcut,{s.shortcut_question_count},{s.shortcut_question_share_pct:.4f}")
    for hop in sorted(s.hop_histogram):
        lines.append(f"hop_count_{hop},{s.hop_histogram[hop]},")
    return "\n".join(lines)
