import pytest

from chemhop.errors import MalformedOutput
from chemhop.relations import Triplet, extract_relations, parse_triplet_list

from conftest import make_chunk, make_entity, scripted_gateway


def entities(*names):
    return [make_entity(n, chunk_id="d#c0") for n in names]


def run_extract(ents, reply, chunk_text="some chemistry text", **kwargs):
    gw, provider = scripted_gateway({"default": reply})
    chunk = make_chunk("d#c0", chunk_text)
    return extract_relations(ents, chunk, gw, model_id="extractor", **kwargs), provider


def test_example_tuple_output():
    out, _ = run_extract(
        entities("HCl", "water", "sodium hydroxide"),
        '[("HCl", "dissolves in", "Water"), ("HCl", "reacts with", "Sodium hydroxide")]',
        chunk_text="HCl dissolves in water and reacts with sodium hydroxide",
    )
    assert Triplet("HCl", "dissolves in", "water", "d#c0") in out
    assert Triplet("HCl", "reacts with", "sodium hydroxide", "d#c0") in out


def test_weak_relations_filtered():
    out, _ = run_extract(
        entities("A", "B"),
        '[("A", "is", "B"), ("A", "are", "B"), ("A", "has", "B"), ("A", "exists", "B"), '
        '("A", "relates to", "B"), ("A", "oxidizes", "B")]',
    )
    assert [0 for t in out if t.relation in {"is", "are", "has", "exists", "relates to"}] == []
    assert [t.relation for t in out] == ["oxidizes"]


def test_single_entity_short_circuits():
    gw, provider = scripted_gateway({"default": "should never be called"})
    chunk = make_chunk("d#c0", "text")
    assert extract_relations(entities("HCl"), chunk, gw, model_id="x") == []
    assert provider.calls == []


def test_json_array_format_accepted():
    out, _ = run_extract(entities("HCl", "water"), '[["HCl", "dissolves in", "water"]]')
    assert out == [Triplet("HCl", "dissolves in", "water", "d#c0")]


def test_unknown_endpoint_dropped():
    out, _ = run_extract(entities("HCl", "water"), '[("HCl", "reacts with", "Zinc")]')
    assert out == []


def test_surface_form_endpoints_resolve():
    ents = [make_entity("methanol", surfaces=["MeOH"]), make_entity("water")]
    out, _ = run_extract(ents, '[("MeOH", "dissolves in", "water")]')
    assert out == [Triplet("methanol", "dissolves in", "water", "d#c0")]


def test_self_loop_dropped():
    out, _ = run_extract(entities("HCl", "water"), '[("HCl", "reacts with", "hcl")]')
    assert out == []


def test_max_facts_cap():
    names = [f"e{i}" for i in range(8)]
    reply = "[" + ", ".join(f'("e{i}", "reacts with", "e{i + 1}")' for i in range(7)) + "]"
    out, _ = run_extract(entities(*names), reply, max_facts=3)
    assert len(out) == 3


def test_duplicate_triplets_deduped_within_chunk():
    out, _ = run_extract(
        entities("HCl", "water"),
        '[("HCl", "dissolves in", "water"), ("hcl", "Dissolves  In", "Water")]',
    )
    assert len(out) == 1


def test_relation_whitespace_normalized_but_verbatim():
    out, _ = run_extract(entities("A", "B"), '[("A", "acts  as a\\tsolvent for", "B")]')
    assert out[0].relation == "acts as a solvent for"


def test_malformed_after_reask_raises():
    gw, provider = scripted_gateway({"default": "no list at all"})
    chunk = make_chunk("d#c0", "text")
    with pytest.raises(MalformedOutput):
        extract_relations(entities("A", "B"), chunk, gw, model_id="x")
    assert len(provider.calls) == 2


def test_parse_triplet_list_validates_shape():
    with pytest.raises(MalformedOutput):
        parse_triplet_list('[("a", "b")]')
    with pytest.raises(MalformedOutput):
        parse_triplet_list('[("a", "b", 3)]')


def test_determinism_with_cache(tmp_path):
    reply = '[("HCl", "dissolves in", "water")]'
    chunk = make_chunk("d#c0", "HCl dissolves in water")
    gw, provider = scripted_gateway({"default": reply}, cache_dir=tmp_path)
    first = extract_relations(entities("HCl", "water"), chunk, gw, model_id="x")
    second = extract_relations(entities("HCl", "water"), chunk, gw, model_id="x")
    assert first == second
    assert len(provider.calls) == 1  # second run fully cached
