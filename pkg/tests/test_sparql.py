from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import KgStubTransport, random_bounded_kg
from kgbeam import Direction, EntityRef, RelationRef
from kgbeam.sparql import (
    NS_PREFIX,
    EndpointConfig,
    EndpointUnavailableError,
    ProtocolError,
    QueryTemplate,
    ResolveMode,
    SparqlClient,
    SparqlKnowledgeGraph,
    make_results_document,
    render_query,
)

GOLDENS = Path(__file__).parent / "goldens" / "sparql"


def _config(**overrides) -> EndpointConfig:
    overrides.setdefault("endpoint", "http://kg.test/sparql")
    overrides.setdefault("backoff_s", 0.0)
    return EndpointConfig(**overrides)


class QueueTransport:
    """Canned outcome queue: exceptions raise, anything else returns."""

    def __init__(self, *outcomes: object) -> None:
        self.outcomes = list(outcomes)
        self.queries: list[str] = []

    def __call__(self, endpoint: str, query: str, timeout_s: float) -> dict:
        self.queries.append(query)
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


# ----- template byte-exactness -----


@pytest.mark.parametrize(
    "template,relation,golden",
    [
        (QueryTemplate.RELATION_OUTWARD, None, "relation_outward.txt"),
        (QueryTemplate.RELATION_INWARD, None, "relation_inward.txt"),
        (QueryTemplate.ENTITY_OUTWARD, "film.film.director", "entity_outward.txt"),
        (QueryTemplate.ENTITY_INWARD, "film.film.director", "entity_inward.txt"),
        (QueryTemplate.MID_TO_LABEL, None, "mid_to_label.txt"),
    ],
)
def test_rendered_queries_match_goldens_byte_for_byte(template, relation, golden):
    rendered = render_query(template, "m.0k3p", relation)
    assert rendered == (GOLDENS / golden).read_text(encoding="utf-8")


def test_render_query_is_pure():
    a = render_query(QueryTemplate.RELATION_OUTWARD, "m.0k3p")
    b = render_query(QueryTemplate.RELATION_OUTWARD, "m.0k3p")
    assert a == b


def test_relation_argument_is_required_iff_entity_template():
    with pytest.raises(ValueError, match="requires a relation"):
        render_query(QueryTemplate.ENTITY_OUTWARD, "m.0k3p")
    with pytest.raises(ValueError, match="does not take a relation"):
        render_query(QueryTemplate.RELATION_OUTWARD, "m.0k3p", "film.film.director")
    with pytest.raises(ValueError, match="does not take a relation"):
        render_query(QueryTemplate.MID_TO_LABEL, "m.0k3p", "film.film.director")


@pytest.mark.parametrize(
    "bad_id",
    [
        "",
        "m.0 k3p",
        "m.0k3p}\nUNION\n{?s ?p ?o",  # injection attempt
        "ns:m.0k3p",
        "m.0k3p;drop",
    ],
)
def test_identifiers_are_validated(bad_id):
    with pytest.raises(ValueError, match="invalid identifier"):
        render_query(QueryTemplate.RELATION_OUTWARD, bad_id)
    with pytest.raises(ValueError, match="invalid relation"):
        render_query(QueryTemplate.ENTITY_OUTWARD, "m.0k3p", bad_id or " ")


def test_endpoint_config_validation():
    with pytest.raises(ValueError):
        EndpointConfig(endpoint="")
    with pytest.raises(ValueError):
        _config(timeout_ms=0)
    with pytest.raises(ValueError):
        _config(result_cap=0)
    with pytest.raises(ValueError):
        _config(cache_capacity=-1)


# ----- client behaviour -----


def test_fetch_strips_namespace_and_preserves_order():
    transport = QueueTransport(
        make_results_document(
            "relation", [NS_PREFIX + "rel.b.b", NS_PREFIX + "rel.a.a", "bare.rel"]
        )
    )
    client = SparqlClient(_config(), transport=transport)
    values = client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0k3p")
    assert values == ["rel.b.b", "rel.a.a", "bare.rel"]
    assert "ns:m.0k3p ?relation ?x" in transport.queries[0]


def test_fetch_caches_per_slot_tuple():
    doc = make_results_document("relation", [NS_PREFIX + "rel.a.a"])
    transport = QueueTransport(doc, doc)
    client = SparqlClient(_config(), transport=transport)
    first = client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0k3p")
    second = client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0k3p")
    assert first == second
    assert len(transport.queries) == 1
    assert (client.query_count, client.cache_hits) == (1, 1)
    # a different slot is a different cache entry
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0other")
    assert len(transport.queries) == 2


def test_cache_mutation_does_not_poison_entries():
    transport = QueueTransport(make_results_document("relation", [NS_PREFIX + "rel.a.a"]))
    client = SparqlClient(_config(), transport=transport)
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0k3p").append("junk.rel")
    assert client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0k3p") == ["rel.a.a"]


def test_cache_capacity_evicts_least_recent():
    docs = [make_results_document("relation", [NS_PREFIX + f"rel.{i}.x"]) for i in range(3)]
    transport = QueueTransport(docs[0], docs[1], docs[0], docs[2])
    client = SparqlClient(_config(cache_capacity=1), transport=transport)
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a")
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0b")  # evicts m.0a
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a")  # refetches
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0c")
    assert len(transport.queries) == 4
    assert client.cache_hits == 0


def test_zero_capacity_disables_caching():
    doc = make_results_document("relation", [])
    transport = QueueTransport(doc, doc)
    client = SparqlClient(_config(cache_capacity=0), transport=transport)
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a")
    client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a")
    assert len(transport.queries) == 2


def test_transport_failures_retry_with_exponential_backoff():
    sleeps: list[float] = []
    transport = QueueTransport(
        ConnectionError("down"),
        ConnectionError("down"),
        make_results_document("relation", [NS_PREFIX + "rel.a.a"]),
    )
    client = SparqlClient(
        _config(retry_limit=2, backoff_s=0.25), transport=transport, sleep=sleeps.append
    )
    assert client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a") == ["rel.a.a"]
    assert sleeps == [0.25, 0.5]


def test_exhausted_retries_raise_endpoint_unavailable():
    transport = QueueTransport(*[ConnectionError("down")] * 3)
    client = SparqlClient(_config(retry_limit=2), transport=transport, sleep=lambda _s: None)
    with pytest.raises(EndpointUnavailableError, match="after 3 attempts"):
        client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a")
    assert len(transport.queries) == 3


def test_malformed_document_is_a_protocol_error_not_retried():
    transport = QueueTransport({"results": "not-a-dict"})
    client = SparqlClient(_config(retry_limit=3), transport=transport)
    with pytest.raises(ProtocolError):
        client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a")
    assert len(transport.queries) == 1


def test_result_cap_truncates_and_warns():
    values = [NS_PREFIX + f"rel.{i:03d}.x" for i in range(5)]
    transport = QueueTransport(make_results_document("relation", values))
    client = SparqlClient(_config(result_cap=2), transport=transport)
    got = client.fetch(QueryTemplate.RELATION_OUTWARD, "m.0a")
    assert got == ["rel.000.x", "rel.001.x"]
    warnings = client.drain_warnings()
    assert len(warnings) == 1 and "truncated to 2" in warnings[0]
    assert client.drain_warnings() == []


# ----- resolution -----


def test_resolve_label_to_id_uses_seeded_map_only():
    client = SparqlClient(_config(), transport=QueueTransport(), label_map={"Canberra": "m.0canb"})
    assert client.resolve("Canberra", ResolveMode.LABEL_TO_ID) == "m.0canb"
    assert client.resolve("Atlantis", ResolveMode.LABEL_TO_ID) is None
    with pytest.raises(ValueError):
        client.resolve("", ResolveMode.LABEL_TO_ID)


def test_resolve_id_to_label_queries_and_falls_back():
    transport = QueueTransport(
        make_results_document("tailEntity", ["Canberra", "Canberra (city)"]),
        make_results_document("tailEntity", []),
    )
    client = SparqlClient(_config(), transport=transport)
    assert client.resolve("m.0canb", ResolveMode.ID_TO_LABEL) == "Canberra"
    assert client.resolve("m.0mute", ResolveMode.ID_TO_LABEL) == "UnName_Entity(m.0mute)"


# ----- graph adapter over a stub endpoint -----


def _adapter(kg, **config_overrides):
    transport = KgStubTransport(kg)
    label_map = {label: eid for eid, label in sorted(kg.labels().items(), reverse=True)}
    client = SparqlClient(_config(**config_overrides), transport=transport, label_map=label_map)
    return SparqlKnowledgeGraph(client), transport


def test_adapter_resolves_and_labels_like_the_store():
    kg = random_bounded_kg(random.Random(5))
    adapter, _ = _adapter(kg)
    labeled = next(eid for eid, _label in sorted(kg.labels().items()))
    ref = adapter.resolve_entity(kg.labels()[labeled])
    assert ref is not None and kg.labels()[ref.id] == kg.labels()[labeled]
    assert adapter.label_of(labeled) == kg.label_of(labeled)
    assert adapter.resolve_entity("m.0visible") is not None  # id-shaped: optimistic
    assert adapter.resolve_entity("not an id, not a label") is None


@given(seed=st.integers(0, 200))
@settings(max_examples=30, deadline=None)
def test_adapter_answers_exactly_like_the_store(seed):
    rng = random.Random(seed)
    kg = random_bounded_kg(rng, max_entities=20)
    adapter, _ = _adapter(kg)
    for entity_id in kg.entity_ids()[:6]:
        entity = kg.entity(entity_id)
        pairs = kg.relations_of(entity)
        assert adapter.relations_of(entity) == pairs
        for relation, direction in pairs[:3]:
            want = kg.neighbors(entity, relation, direction)
            got = adapter.neighbors(entity, relation, direction)
            assert [e.id for e in got] == [e.id for e in want]
            assert [e.display for e in got] == [e.display for e in want]


def test_adapter_stats_counts_queries():
    kg = random_bounded_kg(random.Random(9))
    adapter, _ = _adapter(kg)
    adapter.relations_of(kg.entity(kg.entity_ids()[0]))
    stats = adapter.stats()
    assert stats["backend"] == "sparql"
    assert stats["endpoint"] == "http://kg.test/sparql"
    assert stats["queries"] == 2 and stats["cache_hits"] == 0


def test_make_results_document_shape():
    doc = make_results_document("x", ["a", "b"])
    assert doc["head"]["vars"] == ["x"]
    assert [b["x"]["value"] for b in doc["results"]["bindings"]] == ["a", "b"]
