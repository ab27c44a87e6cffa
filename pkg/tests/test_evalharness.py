import json
import random

import pytest

from chemhop.evalharness import (
    EvalSetup,
    dataset_stats,
    grade,
    make_llm_judge,
    render_context,
    report,
    report_csv,
    report_markdown,
    run_eval,
)
from chemhop.qagen import MultiHopQA, OneHopQA
from chemhop.relations import Triplet

from conftest import scripted_gateway
from oracles import dataset_stats_oracle


def make_item(i: int, hops: int, shortcut: int = 0, rng=None) -> MultiHopQA:
    rng = rng or random.Random(i)
    sub = []
    for h in range(hops):
        source = f"d{i}#c{h}"
        sub.append(
            OneHopQA(
                question=f"sub question {i}.{h}?",
                answer=f"answer-{i}" if h == 0 else f"mid-{i}-{h}",
                triplet=Triplet(f"e{i}{h}", "reacts with", f"e{i}{h + 1}", source),
            )
        )
    words = rng.randint(5, 20)
    question = " ".join(f"w{i}x{j}" for j in range(words)) + "?"
    return MultiHopQA(
        question=question,
        answer=f"answer-{i}",
        sub_qas=sub,
        hop_count=hops,
        shortcut_count=shortcut,
        path_id=f"item-{i}",
        context_chunk_ids=[q.triplet.source_chunk_id for q in sub],
    )


def make_dataset(n: int, rng_seed: int = 0):
    rng = random.Random(rng_seed)
    items = [make_item(i, hops=(i % 4) + 1, shortcut=(1 if i % 5 == 0 else 0), rng=rng) for i in range(n)]
    chunk_texts = {}
    for item in items:
        for cid in item.context_chunk_ids:
            chunk_texts[cid] = " ".join(f"ctx{cid}w{j}" for j in range(rng.randint(20, 60)))
    return items, chunk_texts


def echo_gateway(items, transform=lambda item: item.answer):
    rules = [
        {"contains": [f"Question: {item.question}"], "response": json.dumps({"answer": transform(item)})}
        for item in items
    ]
    return scripted_gateway({"rules": rules})


def counting_judge(verdicts: dict[str, bool]):
    calls = []

    def judge(question, gold, prediction):
        calls.append((question, gold, prediction))
        return verdicts.get(prediction, False)

    return judge, calls


# -- grade -------------------------------------------------------------------------


def test_grade_exact_match_normalization():
    exact, judged = grade("Methane", "methane", judge=None)
    assert exact is True and judged is None
    exact, judged = grade("  carbon   dioxide ", "Carbon Dioxide", judge=None)
    assert exact is True


def test_grade_judge_equivalent():
    judge, calls = counting_judge({"CH4": True})
    exact, judged = grade("CH4", "methane", judge, question="what gas?")
    assert exact is False and judged is True
    assert calls == [("what gas?", "methane", "CH4")]


def test_grade_judge_wrong():
    judge, _ = counting_judge({})
    exact, judged = grade("water", "methane", judge)
    assert exact is False and judged is False


def test_grade_skips_judge_on_exact():
    judge, calls = counting_judge({})
    grade("methane", "Methane", judge)
    assert calls == []


def test_llm_judge_parses_verdicts():
    gw, _ = scripted_gateway({"rules": [{"contains": ["Model answer: CH4"], "response": "CORRECT"}],
                              "default": "INCORRECT."})
    judge = make_llm_judge(gw, model_id="judge")
    assert judge("q", "methane", "CH4") is True
    assert judge("q", "methane", "water") is False


def test_llm_judge_malformed_returns_none():
    gw, provider = scripted_gateway({"default": "hmm, unclear"})
    judge = make_llm_judge(gw, model_id="judge")
    assert judge("q", "gold", "pred") is None
    assert len(provider.calls) == 2  # one retry


# -- run_eval ----------------------------------------------------------------------


def test_gold_echo_all_correct_no_context():
    items, chunks = make_dataset(10)
    gw, _ = echo_gateway(items)
    judge, calls = counting_judge({})
    records = run_eval(items, EvalSetup(model_id="echo", with_context=False), gw, judge=judge)
    assert len(records) == 10
    assert all(r.correct and r.exact_match for r in records)
    assert all(r.judged_correct is None for r in records)
    assert calls == []  # zero judge calls on exact matches
    rep = report(records, items, chunks)
    assert rep.correctness_rate_pct == 100.0


def test_gold_echo_all_correct_with_context():
    items, chunks = make_dataset(6)
    gw, provider = echo_gateway(items)
    records = run_eval(items, EvalSetup(model_id="echo", with_context=True), gw,
                       chunk_texts=chunks, judge=None)
    assert all(r.correct for r in records)
    # context was actually rendered into prompts with source labels
    assert "[Source 1]" in provider.calls[0].user_text


def test_half_scripted_model_scores_fifty():
    items, chunks = make_dataset(10)
    gw, _ = echo_gateway(items, transform=lambda i: i.answer if int(i.path_id.split("-")[1]) % 2 == 0 else "wrong")
    judge, calls = counting_judge({})
    records = run_eval(items, EvalSetup(model_id="half", with_context=False), gw, judge=judge)
    rep = report(records, items, chunks)
    assert rep.correctness_rate_pct == pytest.approx(50.0)
    # judge consulted exactly once per non-exact record
    assert len(calls) == sum(1 for r in records if not r.exact_match)


def test_malformed_output_recorded_not_raised():
    items, chunks = make_dataset(10)
    gw, _ = echo_gateway(items[1:])  # no rule for item 0
    gw.provider.default = "not json at all"
    records = run_eval(items, EvalSetup(model_id="m", with_context=False), gw, judge=None)
    assert len(records) == 10
    bad = [r for r in records if r.note and "malformed" in r.note]
    assert len(bad) == 1
    assert bad[0].correct is False


def test_context_rendering_order_and_labels():
    items, chunks = make_dataset(1)
    item = items[0]
    rendered = render_context(item, chunks)
    for i, cid in enumerate(item.context_chunk_ids, start=1):
        assert f"[Source {i}] {chunks[cid]}" in rendered
    positions = [rendered.index(f"[Source {i}]") for i in range(1, len(item.context_chunk_ids) + 1)]
    assert positions == sorted(positions)


def test_run_eval_requires_chunks_for_context():
    items, _ = make_dataset(2)
    gw, _ = echo_gateway(items)
    with pytest.raises(ValueError):
        run_eval(items, EvalSetup(model_id="m", with_context=True), gw)


def test_latency_and_tokens_recorded():
    items, _ = make_dataset(3)
    gw, _ = echo_gateway(items)
    records = run_eval(items, EvalSetup(model_id="m", with_context=False), gw, judge=None)
    for r in records:
        assert r.latency_s >= 0
        assert r.input_tokens > 0 and r.output_tokens > 0


# -- report / dataset stats ----------------------------------------------------------


def test_report_basic_counts():
    items, chunks = make_dataset(4)
    gw, _ = echo_gateway(items, transform=lambda i: i.answer if int(i.path_id.split("-")[1]) < 2 else "zz")
    records = run_eval(items, EvalSetup(model_id="m", with_context=False), gw, judge=None)
    rep = report(records, items, chunks)
    assert rep.correctness_rate_pct == pytest.approx(50.0)
    assert rep.total_items == 4 and rep.total_correct == 2


def test_dataset_stats_match_oracle_on_40_items():
    items, chunks = make_dataset(40)
    stats = dataset_stats(items, chunks)
    expected = dataset_stats_oracle(items, chunks)
    tol = 1e-9
    assert stats.question_chars_mean == pytest.approx(expected["question_chars_mean"], abs=tol)
    assert stats.question_chars_sd == pytest.approx(expected["question_chars_sd"], abs=tol)
    assert stats.question_tokens_mean == pytest.approx(expected["question_tokens_mean"], abs=tol)
    assert stats.question_tokens_sd == pytest.approx(expected["question_tokens_sd"], abs=tol)
    assert stats.answer_chars_mean == pytest.approx(expected["answer_chars_mean"], abs=tol)
    assert stats.answer_chars_sd == pytest.approx(expected["answer_chars_sd"], abs=tol)
    assert stats.answer_tokens_mean == pytest.approx(expected["answer_tokens_mean"], abs=tol)
    assert stats.answer_tokens_sd == pytest.approx(expected["answer_tokens_sd"], abs=tol)
    assert stats.hops_mean == pytest.approx(expected["hops_mean"], abs=tol)
    assert stats.hops_sd == pytest.approx(expected["hops_sd"], abs=tol)
    assert stats.context_chars_mean == pytest.approx(expected["context_chars_mean"], abs=tol)
    assert stats.context_chars_sd == pytest.approx(expected["context_chars_sd"], abs=tol)
    assert stats.context_tokens_mean == pytest.approx(expected["context_tokens_mean"], abs=tol)
    assert stats.context_tokens_sd == pytest.approx(expected["context_tokens_sd"], abs=tol)
    assert stats.hop_chars_mean == pytest.approx(expected["hop_chars_mean"], abs=tol)
    assert stats.hop_chars_sd == pytest.approx(expected["hop_chars_sd"], abs=tol)
    assert stats.hop_tokens_mean == pytest.approx(expected["hop_tokens_mean"], abs=tol)
    assert stats.hop_tokens_sd == pytest.approx(expected["hop_tokens_sd"], abs=tol)
    assert stats.shortcut_mean == pytest.approx(expected["shortcut_mean"], abs=tol)
    assert stats.shortcut_sd == pytest.approx(expected["shortcut_sd"], abs=tol)
    assert stats.hop_histogram == expected["hop_histogram"]
    assert stats.shortcut_question_count == expected["shortcut_question_count"]


def test_histogram_sums_to_question_count():
    items, chunks = make_dataset(12)
    stats = dataset_stats(items, chunks)
    assert sum(stats.hop_histogram.values()) == stats.question_count == 12


def test_chars_at_least_tokens():
    items, chunks = make_dataset(20)
    stats = dataset_stats(items, chunks)
    assert stats.question_chars_mean >= stats.question_tokens_mean
    assert stats.answer_chars_mean >= stats.answer_tokens_mean
    assert stats.context_chars_mean >= stats.context_tokens_mean


def test_per_hop_breakdown():
    items, chunks = make_dataset(8)  # hops cycle 1..4, two each
    gw, _ = echo_gateway(items, transform=lambda i: i.answer if i.hop_count == 1 else "zz")
    records = run_eval(items, EvalSetup(model_id="m", with_context=False), gw, judge=None)
    rep = report(records, items, chunks)
    assert rep.per_hop[1] == pytest.approx(100.0)
    assert rep.per_hop[2] == pytest.approx(0.0)
    assert set(rep.per_hop) == {1, 2, 3, 4}


def test_report_pure_function():
    items, chunks = make_dataset(5)
    gw, _ = echo_gateway(items)
    records = run_eval(items, EvalSetup(model_id="m", with_context=False), gw, judge=None)
    assert report(records, items, chunks) == report(records, items, chunks)


def test_report_rendering():
    items, chunks = make_dataset(5)
    gw, _ = echo_gateway(items)
    records = run_eval(items, EvalSetup(model_id="m", with_context=False), gw, judge=None)
    rep = report(records, items, chunks)
    md = report_markdown(rep, "m", with_context=False)
    assert "Correctness Rate (%)" in md
    assert "Mean # hops per question" in md
    csv = report_csv(rep, "m", with_context=False)
    assert "correctness_rate_pct" in csv.splitlines()[0]


def test_provider_failure_recorded_not_raised():
    from chemhop.gateway import LlmGateway, ScriptedProvider

    items, _ = make_dataset(3)
    # script covers only items 1 and 2; no default -> item 0 is rejected
    rules = [
        {"contains": [f"Question: {item.question}"], "response": json.dumps({"answer": item.answer})}
        for item in items[1:]
    ]
    gw = LlmGateway(ScriptedProvider({"rules": rules}))
    records = run_eval(items, EvalSetup(model_id="m", with_context=False), gw, judge=None)
    assert len(records) == 3
    failed = [r for r in records if r.note and r.note.startswith("provider_failure")]
    assert len(failed) == 1
    assert failed[0].correct is False
    assert sum(1 for r in records if r.correct) == 2
