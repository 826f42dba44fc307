"""Test-only machinery: random graphs, a deterministic rank scorer, an
independent brute-force path oracle, and a stub SPARQL transport.

The oracle enumerates reasoning paths directly from the graph — it never
touches the engine's beam, pruning, or normalization code — so agreement
between the two is a real check of the search, not a tautology.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from typing import Sequence

from kgbeam import Direction, EntityRef, KnowledgeGraph, RelationRef, Triple
from kgbeam.engine import Hop, ReasoningPath, entity_tokens, relation_tokens
from kgbeam.prompts import PathRendering, ScoredItem, render_path
from kgbeam.sparql import NS_PREFIX, make_results_document

# Exact power of two: rank products and their quotients stay exact in
# binary floating point, so score comparisons cannot be perturbed by
# rounding and the greedy chain is provably the global maximum (any
# non-greedy path carries at least one factor RHO < 1).
RHO = 2.0 ** -8


def rank_map(tokens: Sequence[str], salt: str) -> dict[str, int]:
    """Deterministic strict ranking of a candidate set, keyed by a salt."""
    digests = {
        token: hashlib.sha1(f"{salt}|{token}".encode("utf-8")).hexdigest()
        for token in tokens
    }
    ordered = sorted(tokens, key=lambda t: (digests[t], t))
    return {token: rank for rank, token in enumerate(ordered)}


class RankScorer:
    """Scores every candidate RHO**rank with ranks drawn from rank_map.

    Rank 0 scores exactly 1.0; each further rank costs a factor of RHO.
    Because scores depend only on (salt, token), the oracle can reproduce
    them without calling this object.
    """

    def __init__(self, salt: str) -> None:
        self.salt = salt
        self.calls = 0

    def _score(self, candidates: Sequence[str]) -> list[ScoredItem]:
        ranks = rank_map(candidates, self.salt)
        return [ScoredItem(c, RHO ** ranks[c]) for c in candidates]

    def score_candidates(self, question, context, candidates, k, kind):
        self.calls += 1
        return self._score(candidates)

    def score_candidate_sets(self, question, contexts, candidate_sets, k, kind):
        self.calls += 1
        return [self._score(c) for c in candidate_sets]

    def drain_warnings(self) -> list[str]:
        return []


# ===== Brute-force path oracle =====


def oracle_best_path(
    kg: KnowledgeGraph, topic: EntityRef, depth: int, salt: str
) -> tuple:
    """Identity of the maximum-product path reachable within `depth` hops.

    Enumerates every path from the topic that either has exactly `depth`
    hops or stops early at an entity with no incident relations (the only
    paths the search can end on — an extendable prefix is never a final
    state). Products multiply the per-set rank scores the engine's scorer
    would emit; singleton entity sets count 1 (they are never scored).
    Ties break on the rendered path text, ascending.
    """
    results: list[tuple[float, str, tuple]] = []

    def recurse(path: ReasoningPath, product: float, hops_done: int) -> None:
        pairs = kg.relations_of(path.tail)
        if hops_done == depth or not pairs:
            results.append(
                (product, render_path(path, PathRendering.TRIPLES), path.identity())
            )
            return
        tokens = relation_tokens(pairs)
        relation_ranks = rank_map([t[0] for t in tokens], salt)
        for token, rel, direction in tokens:
            rel_score = RHO ** relation_ranks[token]
            entities = kg.neighbors(path.tail, rel, direction)
            etokens = entity_tokens(entities)
            entity_ranks = rank_map([t[0] for t in etokens], salt)
            for etoken, entity in etokens:
                ent_score = 1.0 if len(etokens) == 1 else RHO ** entity_ranks[etoken]
                recurse(
                    ReasoningPath(path.origin, path.hops + (Hop(rel, direction, entity),)),
                    product * rel_score * ent_score,
                    hops_done + 1,
                )

    recurse(ReasoningPath(topic, ()), 1.0, 0)
    best = sorted(results, key=lambda r: (-r[0], r[1]))[0]
    return best[2]


def path_identity_from_dict(doc: dict) -> tuple:
    return (
        doc["origin"]["id"],
        tuple(
            (h["relation"], h["direction"], h["entity"]["id"]) for h in doc["hops"]
        ),
    )


# ===== Random graphs =====

_RELATION_POOL = [
    "people.person.place_of_birth",
    "location.location.containedby",
    "government.office.holder",
    "sports.team.arena",
    "music.artist.genre",
    "film.film.director",
    "base.schema.part_of",
    "organization.org.founder",
]


def random_kg(rng: random.Random, max_entities: int = 50) -> KnowledgeGraph:
    """Arbitrary small graph; labels on most entities, none on some."""
    n = rng.randint(4, max_entities)
    ids = [f"m.0{i:03x}" for i in range(n)]
    triples = []
    for _ in range(rng.randint(n, 3 * n)):
        s, o = rng.sample(ids, 2)
        rel = rng.choice(_RELATION_POOL)
        triples.append(
            Triple(
                EntityRef(s, _maybe_label(rng, s)),
                RelationRef(rel),
                EntityRef(o, _maybe_label(rng, o)),
            )
        )
    return KnowledgeGraph(triples)


def _maybe_label(rng: random.Random, entity_id: str) -> str | None:
    if rng.random() < 0.2:
        return None
    return f"Node {entity_id[-3:]}"


def random_bounded_kg(
    rng: random.Random, max_entities: int = 40, max_branch: int = 4
) -> KnowledgeGraph:
    """Graph where every entity has at most `max_branch` incident
    (relation, direction) pairs and every such pair at most `max_branch`
    neighbors — so candidate sets never exceed max_branch."""
    n = rng.randint(3, max_entities)
    ids = [f"m.0{i:03x}" for i in range(n)]
    pairs: dict[str, set[tuple[str, str]]] = {i: set() for i in ids}
    fanout: dict[tuple[str, str, str], int] = {}
    triples: list[Triple] = []
    seen: set[tuple[str, str, str]] = set()
    for _ in range(rng.randint(n, 4 * n)):
        s, o = rng.sample(ids, 2)
        rel = rng.choice(_RELATION_POOL)
        if (s, rel, o) in seen:
            continue
        out_pair, in_pair = (rel, "out"), (rel, "in")
        if out_pair not in pairs[s] and len(pairs[s]) >= max_branch:
            continue
        if in_pair not in pairs[o] and len(pairs[o]) >= max_branch:
            continue
        if fanout.get((s, rel, "out"), 0) >= max_branch:
            continue
        if fanout.get((o, rel, "in"), 0) >= max_branch:
            continue
        triples.append(
            Triple(
                EntityRef(s, _maybe_label(rng, s)),
                RelationRef(rel),
                EntityRef(o, _maybe_label(rng, o)),
            )
        )
        seen.add((s, rel, o))
        pairs[s].add(out_pair)
        pairs[o].add(in_pair)
        fanout[(s, rel, "out")] = fanout.get((s, rel, "out"), 0) + 1
        fanout[(o, rel, "in")] = fanout.get((o, rel, "in"), 0) + 1
    return KnowledgeGraph(triples)


def pick_topic(rng: random.Random, kg: KnowledgeGraph) -> EntityRef:
    return kg.entity(rng.choice(kg.entity_ids()))


# ===== Invariant checks over trace documents =====


def assert_beam_invariants(trace_doc: dict, kg: KnowledgeGraph, width: int) -> None:
    """Σ scores = 1, |beam| ≤ N, hops connected in the graph, depth law."""
    for event in trace_doc["depths"]:
        depth = event["depth"]
        for key in ("beam_before", "mid_beam", "beam"):
            states = event.get(key)
            if not states:
                continue
            assert len(states) <= width, f"{key} exceeds width at depth {depth}"
            total = math.fsum(s["score"] for s in states)
            assert abs(total - 1.0) <= 1e-9, f"{key} scores sum {total} at depth {depth}"
        reverted = event.get("reverted", False)
        for state in event.get("beam", []):
            if "hops" in state:
                assert_path_connected(kg, state)
                if state["dead_end"]:
                    assert len(state["hops"]) < depth
                elif not reverted:
                    assert len(state["hops"]) == depth
            else:
                joined = len(state["relations"])
                if state["dead_end"]:
                    assert joined < depth
                elif not reverted:
                    assert joined == depth


def assert_path_connected(kg: KnowledgeGraph, path_doc: dict) -> None:
    adjacency = kg.adjacency_snapshot()
    prev = path_doc["origin"]["id"]
    for hop in path_doc["hops"]:
        if hop["direction"] == "out":
            key = (prev, hop["relation"], hop["entity"]["id"])
        else:
            key = (hop["entity"]["id"], hop["relation"], prev)
        assert key in adjacency, f"hop triple missing from graph: {key}"
        prev = hop["entity"]["id"]


# ===== Stub SPARQL transport =====

_RE_REL_OUT = re.compile(r"ns:([\w.\-]+) \?relation \?x \. ")
_RE_REL_IN = re.compile(r"\?x \?relation ns:([\w.\-]+) \.")
_RE_ENT_OUT = re.compile(r"ns:([\w.\-]+) ns:([\w.\-]+) \?tailEntity \. ")
_RE_ENT_IN = re.compile(r"\?tailEntity ns:([\w.\-]+) ns:([\w.\-]+)  \. ")
_RE_LABEL = re.compile(r"FILTER\(\?entity = ns:([\w.\-]+)\)")


class KgStubTransport:
    """Answers the five rendered queries from an in-memory graph.

    Records every query; `fail_first` injects that many transport errors
    before starting to answer (for retry tests).
    """

    def __init__(self, kg: KnowledgeGraph, fail_first: int = 0) -> None:
        self.kg = kg
        self.queries: list[str] = []
        self.fail_first = fail_first

    def __call__(self, endpoint: str, query: str, timeout_s: float) -> dict:
        self.queries.append(query)
        if self.fail_first > 0:
            self.fail_first -= 1
            raise ConnectionError("injected transport failure")
        if "SELECT ?relation" in query:
            match = _RE_REL_OUT.search(query)
            if match:
                values = sorted(
                    name
                    for name, direction in _pairs(self.kg, match.group(1))
                    if direction == "out"
                )
            else:
                match = _RE_REL_IN.search(query)
                values = sorted(
                    name
                    for name, direction in _pairs(self.kg, match.group(1))
                    if direction == "in"
                )
            return make_results_document(
                "relation", [NS_PREFIX + v for v in values]
            )
        if "SELECT DISTINCT ?tailEntity" in query:
            mid = _RE_LABEL.search(query).group(1)
            label = self.kg.labels().get(mid)
            return make_results_document("tailEntity", [label] if label else [])
        match = _RE_ENT_OUT.search(query)
        if match:
            mid, relation = match.groups()
            ids = [
                e.id
                for e in self.kg.neighbors(
                    EntityRef(mid), RelationRef(relation), Direction.OUTWARD
                )
            ]
        else:
            mid, relation = _RE_ENT_IN.search(query).groups()
            ids = [
                e.id
                for e in self.kg.neighbors(
                    EntityRef(mid), RelationRef(relation), Direction.INWARD
                )
            ]
        return make_results_document("tailEntity", [NS_PREFIX + i for i in ids])


def _pairs(kg: KnowledgeGraph, mid: str) -> list[tuple[str, str]]:
    return [(rel.name, d.value) for rel, d in kg.relations_of(EntityRef(mid))]
