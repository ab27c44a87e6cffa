"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line with its runtime, and failing if its runtime budget or any
tolerance is violated. Tolerances are pinned here, not configurable."""

import random
import time

from chemhop.cli import main as cli_main
from chemhop.errors import NoPathsAvailable
from chemhop.evalharness import EvalSetup, dataset_stats, report, run_eval
from chemhop.graph import stats
from chemhop.ingest import chunk, split_paragraphs
from chemhop.qagen import MultiHopQA, OneHopQA
from chemhop.records import load_records
from chemhop.relations import Triplet
from chemhop.sampler import count_shortcuts, sample_paths
from chemhop.textnorm import contains_phrase, normalize_key
from chemhop.verify import leak_and_length_gate, verify_onehop, verify_path

import e2efixtures
from conftest import graph_from_edges, make_chunk, random_fixture_graph, scripted_gateway
from oracles import (
    count_shortcuts_oracle,
    dataset_stats_oracle,
    enumerate_paths_oracle,
    graph_stats_oracle,
)
from test_evalharness import echo_gateway, make_dataset

TOL = 1e-9


def run_criterion(name: str, budget_s: float, fn) -> None:
    started = time.perf_counter()
    try:
        fn()
    except BaseException:
        print(f"FAIL {name}")
        raise
    elapsed = time.perf_counter() - started
    ok = elapsed < budget_s
    print(f"{'PASS' if ok else 'FAIL'} {name} ({elapsed:.2f}s, budget {budget_s:g}s)")
    assert ok, f"{name}: runtime {elapsed:.2f}s exceeded budget {budget_s:g}s"


# -- criterion 1: graph statistics oracle equivalence -------------------------------


def check_graph_stats():
    def compare(g):
        s = stats(g)
        expected = graph_stats_oracle(list(g.nodes), [(e.head, e.tail) for e in g.edges])
        assert s.node_count == expected["node_count"]
        assert s.edge_count == expected["edge_count"]
        assert abs(s.density - expected["density"]) < TOL
        assert abs(s.degree_min - expected["degree_min"]) < TOL
        assert abs(s.degree_max - expected["degree_max"]) < TOL
        assert abs(s.degree_avg - expected["degree_avg"]) < TOL
        assert s.component_count == expected["component_count"]
        assert s.largest_component == expected["largest_component"]
        assert abs(s.avg_clustering - expected["avg_clustering"]) < TOL
        if expected["degree_assortativity"] is None:
            assert s.degree_assortativity is None
        else:
            assert abs(s.degree_assortativity - expected["degree_assortativity"]) < TOL

    rng = random.Random(2024)
    for _ in range(20):
        n = rng.randint(3, 100)
        m = rng.randint(0, 2 * n)
        compare(random_fixture_graph(rng, n, m))

    # closed forms, exact
    triangle = graph_from_edges([("a", "b", "1"), ("b", "c", "2"), ("a", "c", "3")])
    ts = stats(triangle)
    assert ts.density == 1.0
    assert ts.avg_clustering == 1.0
    assert ts.component_count == 1
    path = graph_from_edges([("a", "b", "1"), ("b", "c", "2")])
    ps = stats(path)
    assert ps.avg_clustering == 0.0
    assert ps.degree_min == 1.0 and ps.degree_max == 2.0


def test_graph_statistics_oracle_equivalence():
    run_criterion("graph-statistics oracle equivalence (20 fixtures, 1e-9)", 5.0, check_graph_stats)


# -- criterion 2: path-sampler soundness ---------------------------------------------


def check_sampler_soundness():
    rng = random.Random(77)
    total = 0
    while total < 1000:
        n = rng.randint(12, 40)
        g = random_fixture_graph(rng, n, rng.randint(n, 3 * n))
        for k in (2, 3):
            feasible = enumerate_paths_oracle(g, k)
            if not feasible:
                continue
            seed = rng.randint(0, 10**6)
            try:
                samples = sample_paths(g, k=k, n=200, seed=seed)
            except NoPathsAvailable:
                continue
            again = sample_paths(g, k=k, n=200, seed=seed)
            assert repr(samples) == repr(again)  # byte-exact determinism
            for s in samples:
                assert len(set(s.nodes)) == k + 1
                for i, edge in enumerate(s.edges):
                    assert g.has_edge(s.nodes[i], s.nodes[i + 1])
                    assert {edge.head, edge.tail} == {s.nodes[i], s.nodes[i + 1]}
                assert len({e.source_chunk_id for e in s.edges}) == k
                canon = min(tuple(s.nodes), tuple(reversed(s.nodes)))
                assert canon in feasible
            total += len(samples)
    assert total >= 1000


def test_path_sampler_soundness():
    run_criterion("path-sampler soundness (1,000 samples vs DFS oracle)", 10.0, check_sampler_soundness)


# -- criterion 3: chunker contract ----------------------------------------------------


def check_chunker_contract():
    rng = random.Random(31)
    for case in range(500):
        n_paragraphs = rng.randint(0, 10)
        paragraphs = [
            " ".join(f"w{case}v{p}n{i}" for i in range(rng.randint(1, 180)))
            for p in range(n_paragraphs)
        ]
        text = "\n\n".join(paragraphs)
        out = chunk(text, doc_id="d")
        rebuilt = [p for c in out for p in split_paragraphs(c.text)]
        assert rebuilt == paragraphs
        for c in out:
            assert c.oversize or c.word_count <= 128
            assert c.word_count == len(c.text.split())


def test_chunker_contract():
    run_criterion("chunker contract (500 randomized corpora)", 2.0, check_chunker_contract)


# -- criterion 4: golden end-to-end (mock LLM) ---------------------------------------


def check_golden_end_to_end(tmp_path, fixture_server):
    e2efixtures.register_corpus_routes(fixture_server)
    paths = e2efixtures.write_fixture_files(tmp_path, fixture_server)
    args = ["--config", str(paths["config"]), "--mock-llm", str(paths["script"])]
    for stage in (
        ["ingest"],
        ["extract-entities"],
        ["extract-relations"],
        ["enrich"],
        ["build-graph"],
        ["sample-paths", "--seed", "7"],
        ["gen-qa"],
        ["verify-qa"],
    ):
        assert cli_main(args + stage) == 0, f"stage {stage} failed"

    dataset = load_records(paths["workdir"] / "dataset.jsonl", "dataset")
    by_question = {rec["question"]: rec for rec in dataset}

    methane = by_question[e2efixtures.METHANE_MULTIHOP_QUESTION]
    assert normalize_key(methane["answer"]) == "methane"
    assert methane["hop_count"] == 3

    carbonylation = by_question[e2efixtures.CARBONYLATION_MULTIHOP_QUESTION]
    assert normalize_key(carbonylation["answer"]) == "carbonylation reactions"
    assert carbonylation["hop_count"] == 2

    for rec in dataset:
        sub_answers = [s["answer"] for s in rec["sub_qas"]]
        assert normalize_key(rec["answer"]) == normalize_key(sub_answers[0])
        for sub_answer in sub_answers:
            assert not contains_phrase(rec["question"], sub_answer)
        assert rec["hop_count"] == len(rec["sub_qas"])
        assert len(rec["context_chunk_ids"]) == rec["hop_count"]


def test_golden_end_to_end(tmp_path, fixture_server):
    run_criterion(
        "golden end-to-end (mock LLM reproduces worked aggregation items)",
        30.0,
        lambda: check_golden_end_to_end(tmp_path, fixture_server),
    )


# -- criterion 5: grading and metrics --------------------------------------------------


def check_grading_and_metrics():
    items, chunks = make_dataset(40)

    judge_calls = []

    def judge(question, gold, prediction):
        judge_calls.append(prediction)
        return False

    # gold echo: 100% correctness, zero judge calls, both regimes
    gw, _ = echo_gateway(items)
    for with_context in (False, True):
        records = run_eval(
            items, EvalSetup(model_id="echo", with_context=with_context), gw,
            chunk_texts=chunks, judge=judge,
        )
        rep = report(records, items, chunks)
        assert rep.correctness_rate_pct == 100.0
    assert judge_calls == []

    # scripted half-correct model: exactly 50.0%
    gw50, _ = echo_gateway(
        items, transform=lambda i: i.answer if int(i.path_id.split("-")[1]) % 2 == 0 else "not it"
    )
    records = run_eval(items, EvalSetup(model_id="half", with_context=False), gw50, judge=judge)
    rep = report(records, items, chunks)
    assert rep.correctness_rate_pct == 50.0
    assert len(judge_calls) == 20  # one judge call per non-exact record

    # dataset statistics vs the direct-formula oracle
    stats_out = dataset_stats(items, chunks)
    expected = dataset_stats_oracle(items, chunks)
    for field, key in [
        ("question_chars_mean", "question_chars_mean"),
        ("question_chars_sd", "question_chars_sd"),
        ("question_tokens_mean", "question_tokens_mean"),
        ("question_tokens_sd", "question_tokens_sd"),
        ("answer_chars_mean", "answer_chars_mean"),
        ("answer_chars_sd", "answer_chars_sd"),
        ("answer_tokens_mean", "answer_tokens_mean"),
        ("answer_tokens_sd", "answer_tokens_sd"),
        ("hops_mean", "hops_mean"),
        ("hops_sd", "hops_sd"),
        ("context_chars_mean", "context_chars_mean"),
        ("context_chars_sd", "context_chars_sd"),
        ("context_tokens_mean", "context_tokens_mean"),
        ("context_tokens_sd", "context_tokens_sd"),
        ("hop_chars_mean", "hop_chars_mean"),
        ("hop_chars_sd", "hop_chars_sd"),
        ("hop_tokens_mean", "hop_tokens_mean"),
        ("hop_tokens_sd", "hop_tokens_sd"),
        ("shortcut_mean", "shortcut_mean"),
        ("shortcut_sd", "shortcut_sd"),
    ]:
        assert abs(getattr(stats_out, field) - expected[key]) < TOL, field
    assert stats_out.hop_histogram == expected["hop_histogram"]
    assert sum(stats_out.hop_histogram.values()) == len(items)


def test_grading_and_metrics():
    run_criterion("grading and metrics (echo/50% models, stats oracle 1e-9)", 10.0, check_grading_and_metrics)


# -- criterion 6: verification gates ---------------------------------------------------


def check_verification_gates():
    onehop_labels = {
        "What dissolves in water and evaporates at 0 C?": "yes",
        "What catalyst is used in the reaction between A and B?": "yes",
        "What is the song of Nirvana that is a chemical entity?": "no",
        "What chemical entity and structural unit form the layered hydroxide structures "
        "with intercalated water ions used in battery materials and OER catalysis?": "no",
    }
    path_labels = {
        "What dissolves in water?": "yes",
        "What catalyst is used in the reaction between A and B?": "yes",
        "Which compound undergoes oxidation in this reaction?": "yes",
        "What product is formed when sodium reacts with chlorine?": "yes",
        "Why do some scientists think this reaction is inefficient?": "no",
        "What is the best solvent for this reaction?": "no",
        "Is this reaction useful in industry?": "no",
        "Do you think this compound is a good catalyst?": "no",
    }
    rules = [
        {"contains": [f"### Question:\n{q}"], "response": label}
        for q, label in {**onehop_labels, **path_labels}.items()
    ]
    gw, _ = scripted_gateway({"rules": rules, "default": "no"})
    support = make_chunk("d#c0", "supporting context")
    for question, label in onehop_labels.items():
        qa = OneHopQA(question, "answer", Triplet("answer", "r", "other", "d#c0"))
        verdict = verify_onehop(qa, support, gw, model_id="judge")
        assert verdict.passed == (label == "yes"), question
    for question, label in path_labels.items():
        item = MultiHopQA(
            question=question, answer="x",
            sub_qas=[OneHopQA("s", "x", Triplet("x", "r", "y", "d#c0"))],
            hop_count=1, path_id="p", context_chunk_ids=["d#c0"],
        )
        verdict = verify_path(item, "Hop 1: (x, r, y)", gw, model_id="judge")
        assert verdict.passed == (label == "yes"), question

    # leak gate catches 100% of 50 synthetically leaked items
    rng = random.Random(8)
    caught = 0
    for i in range(50):
        sub_answers = [f"compound{i}a", f"compound{i}b"]
        leak = sub_answers[rng.randint(0, 1)]
        question = f"Does {leak} form under reflux?"
        item = MultiHopQA(
            question=question,
            answer=sub_answers[0],
            sub_qas=[
                OneHopQA("s1", sub_answers[0], Triplet(sub_answers[0], "r", "m", "d#c0")),
                OneHopQA("s2", sub_answers[1], Triplet(sub_answers[1], "r", "m", "d#c1")),
            ],
            hop_count=2,
            path_id=f"leak-{i}",
            context_chunk_ids=["d#c0", "d#c1"],
        )
        verdict = leak_and_length_gate(item)
        if not verdict.passed and verdict.reason == "answer_in_question":
            caught += 1
    assert caught == 50


def test_verification_gates():
    run_criterion("verification gates (prompt labels replay, leak gate 50/50)", 10.0, check_verification_gates)


# -- criterion 7: shortcut accounting ---------------------------------------------------


def check_shortcut_accounting():
    rng = random.Random(55)
    counted = 0
    while counted < 100:
        g = random_fixture_graph(rng, 25, rng.randint(30, 70))
        try:
            samples = sample_paths(g, k=3, n=40, seed=rng.randint(0, 10**6))
        except NoPathsAvailable:
            continue
        for s in samples:
            assert count_shortcuts(s, g) == count_shortcuts_oracle(s.nodes, g)
            assert s.shortcut_count == count_shortcuts_oracle(s.nodes, g)
        counted += len(samples)
    assert counted >= 100

    # the report's with-shortcut share equals a manual count over the fixture set
    items, chunks = make_dataset(40)
    manual = sum(1 for item in items if item.shortcut_count >= 1)
    stats_out = dataset_stats(items, chunks)
    assert stats_out.shortcut_question_count == manual
    assert abs(stats_out.shortcut_question_share_pct - 100.0 * manual / len(items)) < TOL


def test_shortcut_accounting():
    run_criterion("shortcut accounting (chord counts vs pair scan, report share)", 10.0, check_shortcut_accounting)
