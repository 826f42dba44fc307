"""Iterative beam search over a knowledge graph.

The engine maintains a beam of at most `width` scored states and deepens it
one relation+entity hop per iteration:

  1. relation exploration: fetch relations incident to each state's tail
     entity, have the scorer keep the best ones per state;
  2. entity exploration: fetch the entities behind each kept relation and
     score them (sets with a single entity score 1 without a scorer call);
  3. sufficiency check: ask the reasoner whether the collected evidence can
     answer the question; if yes, generate the answer and stop;
  4. otherwise continue until `max_depth`, then fall back to generation from
     the model's own knowledge.

Two state shapes are supported: full entity paths (variant "tog") and
relation chains that omit intermediate entities (variant "tog-r", which
replaces scored entity selection with seeded uniform sampling performed
*after* the sufficiency check).

Scores propagate multiplicatively along a path and the beam is renormalized
to sum 1 after every pruning step. Every step is recorded in a Trace whose
per-depth snapshots can be re-derived from the recorded candidates/scores
(see verify_trace_replay).
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .kg import Direction, EntityRef, RelationRef
from .prompts import PathRendering, render_path
from .scoring import PruneContext, PruneKind, PruneScorer, Reasoner, ScoredItem
from .scoring import LLMUnavailableError
from . import prompts

DEFAULT_WIDTH = 3
DEFAULT_MAX_DEPTH = 3
DEFAULT_RESULT_CAP = 200

SCORE_TOLERANCE = 1e-9


class EngineError(RuntimeError):
    """A run aborted mid-flight; carries the partial trace."""

    def __init__(self, message: str, trace: "Trace | None" = None) -> None:
        super().__init__(message)
        self.trace = trace


class InitializationError(RuntimeError):
    """No topic entity could be resolved against the graph."""


class ReplayError(AssertionError):
    """A recorded trace does not reproduce its own beam snapshots."""


class Variant(str, Enum):
    TOG = "tog"
    TOG_R = "tog-r"


class PruneMode(str, Enum):
    PER_SET = "per-set"
    UNIFIED = "unified"


class EntityPruneMode(str, Enum):
    SCORED = "scored"
    RANDOM = "random"


@dataclass(frozen=True)
class SearchConfig:
    width: int = DEFAULT_WIDTH
    max_depth: int = DEFAULT_MAX_DEPTH
    variant: Variant = Variant.TOG
    rendering: PathRendering = PathRendering.TRIPLES
    prune_mode: PruneMode = PruneMode.PER_SET
    entity_prune: EntityPruneMode | None = None
    seed: int = 0
    result_cap: int = DEFAULT_RESULT_CAP

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.result_cap < 1:
            raise ValueError("result_cap must be >= 1")
        if self.entity_prune is None:
            default = (
                EntityPruneMode.RANDOM
                if self.variant is Variant.TOG_R
                else EntityPruneMode.SCORED
            )
            object.__setattr__(self, "entity_prune", default)
        if self.entity_prune is EntityPruneMode.RANDOM and self.variant is not Variant.TOG_R:
            raise ValueError("random entity pruning is only valid for variant tog-r")
        if self.variant is Variant.TOG_R and self.rendering is PathRendering.TRIPLES:
            raise ValueError(
                "variant tog-r omits intermediate entities; pick sequences or "
                "sentences rendering"
            )

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "max_depth": self.max_depth,
            "variant": self.variant.value,
            "rendering": self.rendering.value,
            "prune_mode": self.prune_mode.value,
            "entity_prune": self.entity_prune.value,
            "seed": self.seed,
            "result_cap": self.result_cap,
        }


def search_config_from_dict(doc: dict) -> SearchConfig:
    base = SearchConfig()
    entity_prune = doc.get("entity_prune")
    return SearchConfig(
        width=doc.get("width", base.width),
        max_depth=doc.get("max_depth", base.max_depth),
        variant=Variant(doc.get("variant", base.variant.value)),
        rendering=PathRendering(doc.get("rendering", base.rendering.value)),
        prune_mode=PruneMode(doc.get("prune_mode", base.prune_mode.value)),
        entity_prune=EntityPruneMode(entity_prune) if entity_prune else None,
        seed=doc.get("seed", base.seed),
        result_cap=doc.get("result_cap", base.result_cap),
    )


# ===== Beam states =====


@dataclass(frozen=True)
class Hop:
    relation: RelationRef
    direction: Direction
    entity: EntityRef


@dataclass(frozen=True)
class ReasoningPath:
    """An entity path: origin plus zero or more traversed hops."""

    origin: EntityRef
    hops: tuple[Hop, ...] = ()
    score: float = 0.0
    dead_end: bool = False

    @property
    def tail(self) -> EntityRef:
        return self.hops[-1].entity if self.hops else self.origin

    def identity(self) -> tuple:
        return (
            self.origin.id,
            tuple((h.relation.name, h.direction.value, h.entity.id) for h in self.hops),
        )


@dataclass(frozen=True)
class RelationChain:
    """A relation chain: origin, traversed relations, and the concrete tail.

    The tail entity is tracked so the search can continue, but renderings
    deliberately omit it (only `frontier` candidates are ever shown).
    """

    origin: EntityRef
    relations: tuple[tuple[RelationRef, Direction], ...] = ()
    tail: EntityRef | None = None
    score: float = 0.0
    dead_end: bool = False
    frontier: tuple[EntityRef, ...] = ()

    @property
    def tail_entity(self) -> EntityRef:
        return self.tail if self.tail is not None else self.origin

    def identity(self) -> tuple:
        return (
            self.origin.id,
            tuple((r.name, d.value) for r, d in self.relations),
            self.tail_entity.id,
        )


@dataclass(frozen=True)
class PendingExpansion:
    """A state that has chosen a relation but not yet its entity.

    `relation` is None for dead ends carried through the step unchanged.
    """

    base: ReasoningPath | RelationChain
    relation: RelationRef | None
    direction: Direction | None
    score: float
    frontier: tuple[EntityRef, ...] = ()

    def identity(self) -> tuple:
        token = (self.relation.name, self.direction.value) if self.relation else ()
        return self.base.identity() + (token,)


class _ChainView:
    """Duck-typed adapter so pending chains render with their new relation."""

    def __init__(self, pending: PendingExpansion) -> None:
        base = pending.base
        self.origin = base.origin
        self.relations = list(base.relations)
        if pending.relation is not None:
            self.relations.append((pending.relation, pending.direction))
        self.frontier = list(pending.frontier)


def render_state(state, rendering: PathRendering) -> str:
    if isinstance(state, PendingExpansion):
        if isinstance(state.base, RelationChain):
            return render_path(_ChainView(state), rendering)
        # mid-step entity path: render the base and append the chosen relation
        text = render_path(state.base, rendering)
        if state.relation is not None:
            text += prompts.ARROW + state.relation.name
        return text
    return render_path(state, rendering)


# ===== Call ledger =====


@dataclass
class CallLedger:
    """Backend call counters by role.

    `total` is the search budget: pruning + sufficiency + generation calls.
    Topic extraction happens once before the search starts and is tracked
    separately, outside the budget total.
    """

    topic_extract: int = 0
    relation_prune: int = 0
    entity_prune: int = 0
    sufficiency: int = 0
    generate: int = 0

    @property
    def total(self) -> int:
        return self.relation_prune + self.entity_prune + self.sufficiency + self.generate

    def as_dict(self) -> dict:
        return {
            "topic_extract": self.topic_extract,
            "relation_prune": self.relation_prune,
            "entity_prune": self.entity_prune,
            "sufficiency": self.sufficiency,
            "generate": self.generate,
            "total": self.total,
        }


@dataclass
class Outcome:
    answer: str
    raw_reply: str
    fallback: bool
    depth_reached: int
    paths: list[dict]
    ledger: CallLedger
    init_failed: bool = False

    def as_dict(self) -> dict:
        return {
            "answer": self.answer,
            "raw_reply": self.raw_reply,
            "fallback": self.fallback,
            "depth_reached": self.depth_reached,
            "paths": self.paths,
            "init_failed": self.init_failed,
        }


@dataclass
class Trace:
    question: str
    config: dict
    depths: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    outcome: dict = field(default_factory=dict)
    ledger: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "config": self.config,
            "depths": self.depths,
            "warnings": self.warnings,
            "outcome": self.outcome,
            "ledger": self.ledger,
        }


def canonical_json(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


# ===== Serialization helpers =====


def _entity_dict(entity: EntityRef) -> dict:
    return {"id": entity.id, "label": entity.label}


def _entity_from_dict(doc: dict) -> EntityRef:
    return EntityRef(doc["id"], doc.get("label"))


def path_to_dict(path: ReasoningPath) -> dict:
    return {
        "origin": _entity_dict(path.origin),
        "hops": [
            {
                "relation": hop.relation.name,
                "direction": hop.direction.value,
                "entity": _entity_dict(hop.entity),
            }
            for hop in path.hops
        ],
        "score": path.score,
        "dead_end": path.dead_end,
    }


def path_from_dict(doc: dict) -> ReasoningPath:
    hops = tuple(
        Hop(RelationRef(h["relation"]), Direction(h["direction"]), _entity_from_dict(h["entity"]))
        for h in doc["hops"]
    )
    return ReasoningPath(
        _entity_from_dict(doc["origin"]), hops, doc["score"], doc.get("dead_end", False)
    )


def chain_to_dict(chain: RelationChain) -> dict:
    return {
        "origin": _entity_dict(chain.origin),
        "relations": [
            {"relation": rel.name, "direction": direction.value}
            for rel, direction in chain.relations
        ],
        "tail": _entity_dict(chain.tail_entity),
        "frontier": [_entity_dict(e) for e in chain.frontier],
        "score": chain.score,
        "dead_end": chain.dead_end,
    }


def chain_from_dict(doc: dict) -> RelationChain:
    relations = tuple(
        (RelationRef(r["relation"]), Direction(r["direction"])) for r in doc["relations"]
    )
    return RelationChain(
        _entity_from_dict(doc["origin"]),
        relations,
        _entity_from_dict(doc["tail"]),
        doc["score"],
        doc.get("dead_end", False),
        tuple(_entity_from_dict(e) for e in doc.get("frontier", [])),
    )


def state_to_dict(state) -> dict:
    if isinstance(state, ReasoningPath):
        return path_to_dict(state)
    return chain_to_dict(state)


def _pending_to_dict(pending: PendingExpansion, rendering: PathRendering) -> dict:
    doc = {
        "base": state_to_dict(pending.base),
        "relation": pending.relation.name if pending.relation else None,
        "direction": pending.direction.value if pending.direction else None,
        "score": pending.score,
        "frontier": [_entity_dict(e) for e in pending.frontier],
        "rendered": render_state(pending, rendering),
    }
    return doc


# ===== Candidate tokens =====


def relation_tokens(
    pairs: Sequence[tuple[RelationRef, Direction]]
) -> list[tuple[str, RelationRef, Direction]]:
    """Scorer-facing tokens for relation candidates.

    Tokens are plain relation names unless the same name occurs in both
    directions within the set, in which case the direction is appended to
    keep the mapping injective.
    """
    counts = Counter(rel.name for rel, _ in pairs)
    tokens = []
    for rel, direction in pairs:
        if counts[rel.name] > 1:
            tokens.append((f"{rel.name} [{direction.value}]", rel, direction))
        else:
            tokens.append((rel.name, rel, direction))
    return tokens


def entity_tokens(entities: Sequence[EntityRef]) -> list[tuple[str, EntityRef]]:
    """Scorer-facing tokens for entity candidates (display names, made unique)."""
    counts = Counter(e.display for e in entities)
    tokens = []
    for entity in entities:
        if counts[entity.display] > 1:
            tokens.append((f"{entity.display} [{entity.id}]", entity))
        else:
            tokens.append((entity.display, entity))
    return tokens


# ===== Selection =====


@dataclass
class _Candidate:
    raw: float
    tie_text: str
    identity: tuple
    payload: object  # state missing its final normalized score


def _select_top(
    candidates: list[_Candidate], n: int
) -> tuple[list[tuple[object, float]], list[str]]:
    """Dedupe, drop zero scores, keep the global top-n, renormalize to sum 1.

    Ties break on score (descending) then the rendered text (ascending).
    Duplicated states keep their higher score. If every candidate scored
    zero, falls back to a uniform distribution over the first n (by rendered
    text) with a warning.
    """
    warnings: list[str] = []
    if not candidates:
        return [], warnings

    best: dict[tuple, _Candidate] = {}
    for cand in candidates:
        kept = best.get(cand.identity)
        if kept is None or cand.raw > kept.raw:
            best[cand.identity] = cand
    deduped = list(best.values())

    positive = [c for c in deduped if c.raw > 0.0]
    if not positive:
        chosen = sorted(deduped, key=lambda c: c.tie_text)[:n]
        warnings.append(
            "all candidates scored zero; falling back to uniform scores over "
            f"the first {len(chosen)}"
        )
        share = 1.0 / len(chosen)
        return [(c.payload, share) for c in chosen], warnings

    chosen = sorted(positive, key=lambda c: (-c.raw, c.tie_text))[:n]
    total = math.fsum(c.raw for c in chosen)
    return [(c.payload, c.raw / total) for c in chosen], warnings


# ===== Engine =====


class Engine:
    """Runs the search loop against a graph, a prune scorer and a reasoner."""

    def __init__(self, kg, scorer: PruneScorer, reasoner: Reasoner, config: SearchConfig) -> None:
        self.kg = kg
        self.scorer = scorer
        self.reasoner = reasoner
        self.config = config

    # -- helpers --

    def _drain_backend_warnings(self, sink: list[str]) -> None:
        for backend in (self.kg, self.scorer, self.reasoner):
            drain = getattr(backend, "drain_warnings", None)
            if drain is not None:
                sink.extend(drain())

    def _beam_dicts(self, beam: list) -> list[dict]:
        return [state_to_dict(s) for s in beam]

    # -- steps --

    def initialize(self, question: str, ledger: CallLedger, warnings: list[str]) -> list:
        """Build the initial beam from extracted topic entities."""
        items = self.reasoner.extract_topics(question)
        ledger.topic_extract += 1
        resolved: dict[str, tuple[EntityRef, float]] = {}
        for item in items:
            entity = self.kg.resolve_entity(item.name)
            if entity is None:
                warnings.append(f"topic {item.name!r} not found in the graph; dropped")
                continue
            score = max(0.0, item.score)
            kept = resolved.get(entity.id)
            if kept is None or score > kept[1]:
                resolved[entity.id] = (entity, score)
        if not resolved:
            raise InitializationError("no topic entity could be resolved")

        pairs = sorted(resolved.values(), key=lambda t: (-t[1], t[0].id))[: self.config.width]
        total = math.fsum(score for _, score in pairs)
        if total <= 0.0:
            scores = [1.0 / len(pairs)] * len(pairs)
        else:
            scores = [score / total for _, score in pairs]
        if self.config.variant is Variant.TOG:
            return [
                ReasoningPath(entity, (), score)
                for (entity, _), score in zip(pairs, scores)
            ]
        return [
            RelationChain(entity, (), entity, score)
            for (entity, _), score in zip(pairs, scores)
        ]

    def explore_relations(
        self, question: str, beam: list, ledger: CallLedger, event: dict
    ) -> list[PendingExpansion]:
        """Pick the best relation continuations for every beam state."""
        config = self.config
        sources_with_candidates: list[tuple[int, list[tuple[str, RelationRef, Direction]]]] = []
        candidate_record: list[list[dict]] = []
        step_warnings: list[str] = []

        for index, state in enumerate(beam):
            tail = state.tail if isinstance(state, ReasoningPath) else state.tail_entity
            pairs = self.kg.relations_of(tail)
            if len(pairs) > config.result_cap:
                step_warnings.append(
                    f"relation candidates for {tail.id} truncated to {config.result_cap}"
                )
                pairs = pairs[: config.result_cap]
            tokens = relation_tokens(pairs)
            candidate_record.append(
                [
                    {"token": tok, "relation": rel.name, "direction": direction.value}
                    for tok, rel, direction in tokens
                ]
            )
            if tokens:
                sources_with_candidates.append((index, tokens))

        # score every non-empty candidate set
        scored_record: list[list[dict]] = [[] for _ in beam]
        scored_by_source: dict[int, list[ScoredItem]] = {}
        if sources_with_candidates:
            contexts = [
                PruneContext(path_text=render_state(beam[i], config.rendering))
                for i, _ in sources_with_candidates
            ]
            token_lists = [[t[0] for t in tokens] for _, tokens in sources_with_candidates]
            if config.prune_mode is PruneMode.UNIFIED:
                results = self.scorer.score_candidate_sets(
                    question, contexts, token_lists, config.width, PruneKind.RELATION
                )
                ledger.relation_prune += 1
            else:
                results = []
                for context, tokens in zip(contexts, token_lists):
                    results.append(
                        self.scorer.score_candidates(
                            question, context, tokens, config.width, PruneKind.RELATION
                        )
                    )
                    ledger.relation_prune += 1
            for (index, _tokens), items in zip(sources_with_candidates, results):
                scored_by_source[index] = items
                scored_record[index] = [{"name": i.name, "score": i.score} for i in items]

        # expand
        expansions: list[_Candidate] = []
        for index, state in enumerate(beam):
            tokens = {tok: (rel, direction) for tok, rel, direction in
                      ((t["token"], RelationRef(t["relation"]), Direction(t["direction"]))
                       for t in candidate_record[index])}
            if not tokens:
                carried = PendingExpansion(
                    base=_mark_dead(state), relation=None, direction=None, score=state.score
                )
                expansions.append(
                    _Candidate(
                        raw=state.score,
                        tie_text=render_state(carried, config.rendering),
                        identity=carried.identity(),
                        payload=carried,
                    )
                )
                continue
            for item in scored_by_source.get(index, []):
                if item.name not in tokens:
                    continue
                rel, direction = tokens[item.name]
                pending = PendingExpansion(
                    base=state, relation=rel, direction=direction,
                    score=state.score * item.score,
                )
                expansions.append(
                    _Candidate(
                        raw=state.score * item.score,
                        tie_text=render_state(pending, config.rendering),
                        identity=pending.identity(),
                        payload=pending,
                    )
                )

        selected, select_warnings = _select_top(expansions, config.width)
        step_warnings.extend(select_warnings)
        self._drain_backend_warnings(step_warnings)

        pendings = [replace_pending_score(p, score) for p, score in selected]
        event["candidates"].append({"stage": "relations", "sets": candidate_record})
        event["scores"].append({"stage": "relations", "sets": scored_record})
        event["mid_beam"] = [_pending_to_dict(p, config.rendering) for p in pendings]
        event["warnings"].extend(step_warnings)
        return pendings

    def explore_entities(
        self,
        question: str,
        pendings: list[PendingExpansion],
        beam_before: list,
        ledger: CallLedger,
        event: dict,
    ) -> list:
        """Resolve each pending relation to concrete entities and prune."""
        config = self.config
        step_warnings: list[str] = []
        candidate_record: list[list[dict]] = []
        scored_record: list[list[dict]] = []
        per_pending: list[list[tuple[str, EntityRef]] | None] = []

        for pending in pendings:
            if pending.relation is None:
                candidate_record.append([])
                per_pending.append(None)
                continue
            base_tail = (
                pending.base.tail
                if isinstance(pending.base, ReasoningPath)
                else pending.base.tail_entity
            )
            found = self.kg.neighbors(base_tail, pending.relation, pending.direction)
            if len(found) > config.result_cap:
                step_warnings.append(
                    f"entity candidates for {base_tail.id} --{pending.relation.name}-> "
                    f"truncated to {config.result_cap}"
                )
                found = found[: config.result_cap]
            tokens = entity_tokens(found)
            candidate_record.append([_entity_dict(e) for _, e in tokens])
            per_pending.append(tokens)

        # scorer calls only for sets with more than one candidate
        multi = [
            (i, tokens) for i, tokens in enumerate(per_pending) if tokens and len(tokens) > 1
        ]
        scored_by_pending: dict[int, list[ScoredItem]] = {}
        if multi and config.entity_prune is EntityPruneMode.SCORED:
            contexts = [
                PruneContext(
                    path_text=render_state(pendings[i].base, config.rendering),
                    relation=pendings[i].relation.name,
                )
                for i, _ in multi
            ]
            token_lists = [[t[0] for t in tokens] for _, tokens in multi]
            if config.prune_mode is PruneMode.UNIFIED:
                results = self.scorer.score_candidate_sets(
                    question, contexts, token_lists, config.width, PruneKind.ENTITY
                )
                ledger.entity_prune += 1
            else:
                results = []
                for context, tokens in zip(contexts, token_lists):
                    results.append(
                        self.scorer.score_candidates(
                            question, context, tokens, config.width, PruneKind.ENTITY
                        )
                    )
                    ledger.entity_prune += 1
            for (i, _tokens), items in zip(multi, results):
                scored_by_pending[i] = items

        expansions: list[_Candidate] = []
        for i, pending in enumerate(pendings):
            tokens = per_pending[i]
            if pending.relation is None:
                path = pending.base
                expansions.append(
                    _Candidate(
                        raw=pending.score,
                        tie_text=render_state(path, config.rendering),
                        identity=path.identity(),
                        payload=path,
                    )
                )
                scored_record.append([])
                continue
            if not tokens:
                step_warnings.append(
                    f"relation {pending.relation.name!r} produced no entities; "
                    "pending path dropped"
                )
                scored_record.append([])
                continue
            if len(tokens) == 1:
                items = [ScoredItem(tokens[0][0], 1.0)]
            else:
                items = scored_by_pending.get(i, [])
            scored_record.append([{"name": it.name, "score": it.score} for it in items])
            token_map = dict(tokens)
            for item in items:
                entity = token_map.get(item.name)
                if entity is None:
                    continue
                path = ReasoningPath(
                    origin=pending.base.origin,
                    hops=pending.base.hops
                    + (Hop(pending.relation, pending.direction, entity),),
                    score=pending.score * item.score,
                )
                expansions.append(
                    _Candidate(
                        raw=pending.score * item.score,
                        tie_text=render_path(path, config.rendering),
                        identity=path.identity(),
                        payload=path,
                    )
                )

        selected, select_warnings = _select_top(expansions, config.width)
        step_warnings.extend(select_warnings)
        self._drain_backend_warnings(step_warnings)

        event["candidates"].append({"stage": "entities", "sets": candidate_record})
        event["scores"].append({"stage": "entities", "sets": scored_record})

        if not selected:
            step_warnings.append(
                "every pending relation yielded no entities; keeping previous beam"
            )
            event["reverted"] = True
            event["warnings"].extend(step_warnings)
            return list(beam_before)

        beam = [replace(path, score=score) for path, score in selected]
        event["warnings"].extend(step_warnings)
        return beam

    # -- relation-chain specific steps --

    def togr_entity_search(
        self, pendings: list[PendingExpansion], event: dict
    ) -> list[PendingExpansion]:
        """Attach candidate-entity frontiers to pending chains (no scoring)."""
        config = self.config
        step_warnings: list[str] = []
        out: list[PendingExpansion] = []
        candidate_record: list[list[dict]] = []
        for pending in pendings:
            if pending.relation is None:
                candidate_record.append([])
                out.append(pending)
                continue
            tail = pending.base.tail_entity
            found = self.kg.neighbors(tail, pending.relation, pending.direction)
            if len(found) > config.result_cap:
                step_warnings.append(
                    f"entity candidates for {tail.id} --{pending.relation.name}-> "
                    f"truncated to {config.result_cap}"
                )
                found = found[: config.result_cap]
            if not found:
                step_warnings.append(
                    f"relation {pending.relation.name!r} produced no entities; "
                    "chain carried as dead end"
                )
                carried = PendingExpansion(
                    base=_mark_dead(pending.base), relation=None, direction=None,
                    score=pending.score,
                )
                candidate_record.append([])
                out.append(carried)
                continue
            candidate_record.append([_entity_dict(e) for e in found])
            out.append(replace(pending, frontier=tuple(found)))
        event["candidates"].append({"stage": "entities", "sets": candidate_record})
        event["mid_beam"] = [_pending_to_dict(p, config.rendering) for p in out]
        event["warnings"].extend(step_warnings)
        return out

    def togr_random_prune(
        self, pendings: list[PendingExpansion], rng: random.Random, event: dict
    ) -> list[RelationChain]:
        """Sample the next tails uniformly from the aggregated frontier.

        Runs after the sufficiency check. Each sampled entity extends the
        highest-scored pending chain whose frontier contains it; carried
        dead ends compete for beam slots by score as usual.
        """
        config = self.config
        pool: dict[str, tuple[PendingExpansion, EntityRef]] = {}
        for pending in sorted(pendings, key=lambda p: -p.score):
            for entity in pending.frontier:
                if entity.id not in pool:
                    pool[entity.id] = (pending, entity)

        sampled_ids = random_prune(sorted(pool), config.width, rng)
        event["sampled"] = list(sampled_ids)

        candidates: list[_Candidate] = []
        for entity_id in sampled_ids:
            pending, entity = pool[entity_id]
            chain = RelationChain(
                origin=pending.base.origin,
                relations=pending.base.relations
                + (((pending.relation, pending.direction),) if pending.relation else ()),
                tail=entity,
                score=pending.score,
            )
            candidates.append(
                _Candidate(
                    raw=pending.score,
                    tie_text=render_path(chain, config.rendering) + f" @{entity.id}",
                    identity=chain.identity(),
                    payload=chain,
                )
            )
        for pending in pendings:
            if pending.relation is None:
                chain = pending.base
                candidates.append(
                    _Candidate(
                        raw=pending.score,
                        tie_text=render_path(chain, config.rendering)
                        + f" @{chain.tail_entity.id}",
                        identity=chain.identity(),
                        payload=chain,
                    )
                )

        selected, select_warnings = _select_top(candidates, config.width)
        event["warnings"].extend(select_warnings)
        return [replace(chain, score=score) for chain, score in selected]

    def togr_scored_prune(
        self,
        question: str,
        pendings: list[PendingExpansion],
        ledger: CallLedger,
        event: dict,
    ) -> list[RelationChain]:
        """Scorer-driven variant of the chain entity step (non-default)."""
        config = self.config
        step_warnings: list[str] = []
        candidates: list[_Candidate] = []
        scored_record: list[list[dict]] = []
        multi = [
            (i, entity_tokens(p.frontier))
            for i, p in enumerate(pendings)
            if p.relation is not None and len(p.frontier) > 1
        ]
        scored_by_pending: dict[int, list[ScoredItem]] = {}
        if multi:
            contexts = [
                PruneContext(
                    path_text=render_state(pendings[i].base, config.rendering),
                    relation=pendings[i].relation.name,
                )
                for i, _ in multi
            ]
            token_lists = [[t[0] for t in tokens] for _, tokens in multi]
            if config.prune_mode is PruneMode.UNIFIED:
                results = self.scorer.score_candidate_sets(
                    question, contexts, token_lists, config.width, PruneKind.ENTITY
                )
                ledger.entity_prune += 1
            else:
                results = []
                for context, tokens in zip(contexts, token_lists):
                    results.append(
                        self.scorer.score_candidates(
                            question, context, tokens, config.width, PruneKind.ENTITY
                        )
                    )
                    ledger.entity_prune += 1
            scored_by_pending = {i: items for (i, _), items in zip(multi, results)}

        for i, pending in enumerate(pendings):
            if pending.relation is None:
                chain = pending.base
                candidates.append(
                    _Candidate(
                        raw=pending.score,
                        tie_text=render_path(chain, config.rendering)
                        + f" @{chain.tail_entity.id}",
                        identity=chain.identity(),
                        payload=chain,
                    )
                )
                scored_record.append([])
                continue
            tokens = entity_tokens(pending.frontier)
            if len(tokens) == 1:
                items = [ScoredItem(tokens[0][0], 1.0)]
            else:
                items = scored_by_pending.get(i, [])
            scored_record.append([{"name": it.name, "score": it.score} for it in items])
            token_map = dict(tokens)
            for item in items:
                entity = token_map.get(item.name)
                if entity is None:
                    continue
                chain = RelationChain(
                    origin=pending.base.origin,
                    relations=pending.base.relations
                    + ((pending.relation, pending.direction),),
                    tail=entity,
                    score=pending.score * item.score,
                )
                candidates.append(
                    _Candidate(
                        raw=pending.score * item.score,
                        tie_text=render_path(chain, config.rendering) + f" @{entity.id}",
                        identity=chain.identity(),
                        payload=chain,
                    )
                )

        selected, select_warnings = _select_top(candidates, config.width)
        step_warnings.extend(select_warnings)
        self._drain_backend_warnings(step_warnings)
        event["scores"].append({"stage": "entities", "sets": scored_record})
        event["warnings"].extend(step_warnings)
        return [replace(chain, score=score) for chain, score in selected]

    # -- reasoning steps --

    def _render_evidence(self, states: list) -> str:
        return prompts.render_beam(states, self.config.rendering)

    def check_sufficiency(
        self, question: str, states: list, depth: int, ledger: CallLedger, event: dict
    ) -> bool:
        """Ask the reasoner whether the evidence answers the question."""
        chains = self.config.variant is Variant.TOG_R
        if chains:
            rendered = "\n".join(
                render_state(s, self.config.rendering) for s in states
            )
        else:
            rendered = self._render_evidence(states)
        ledger.sufficiency += 1
        try:
            verdict = self.reasoner.judge_sufficiency(
                question, rendered, chains=chains, depth=depth
            )
        except LLMUnavailableError:
            raise
        except Exception as exc:  # malformed backend behaviour: treat as "not yet"
            event["warnings"].append(f"sufficiency check failed ({exc}); assuming No")
            verdict = False
        event["sufficient"] = verdict
        return verdict

    def answer(
        self,
        question: str,
        states: list,
        fallback: bool,
        ledger: CallLedger,
        warnings: list[str],
    ) -> tuple[str, str]:
        """Generate the final answer; with paths unless falling back."""
        chains = self.config.variant is Variant.TOG_R
        with_paths = bool(states) and not fallback
        if not with_paths:
            rendered = ""
        elif chains:
            rendered = "\n".join(render_state(s, self.config.rendering) for s in states)
        else:
            rendered = self._render_evidence(states)
        reply = self.reasoner.generate_answer(
            question, rendered, with_paths=with_paths, chains=chains
        )
        ledger.generate += 1
        self._drain_backend_warnings(warnings)
        return prompts.parse_answer(reply), reply

    # -- the loop --

    def run(self, question: str) -> tuple[Outcome, Trace]:
        if not question or not question.strip():
            raise ValueError("question must be non-empty")
        config = self.config
        ledger = CallLedger()
        trace = Trace(question=question, config=config.to_dict())
        rng = random.Random(config.seed)

        try:
            try:
                beam = self.initialize(question, ledger, trace.warnings)
            except InitializationError as exc:
                trace.warnings.append(f"{exc}; answering from inherent knowledge")
                answer_text, raw = self.answer(question, [], True, ledger, trace.warnings)
                outcome = Outcome(
                    answer=answer_text,
                    raw_reply=raw,
                    fallback=True,
                    depth_reached=0,
                    paths=[],
                    ledger=ledger,
                    init_failed=True,
                )
                trace.outcome = outcome.as_dict()
                trace.ledger = ledger.as_dict()
                return outcome, trace

            self._drain_backend_warnings(trace.warnings)
            outcome: Outcome | None = None
            final_states: list = beam

            for depth in range(1, config.max_depth + 1):
                event: dict = {
                    "depth": depth,
                    "beam_before": self._beam_dicts(beam),
                    "candidates": [],
                    "scores": [],
                    "warnings": [],
                }
                pendings = self.explore_relations(question, beam, ledger, event)

                if config.variant is Variant.TOG:
                    beam = self.explore_entities(
                        question, pendings, beam, ledger, event
                    )
                    event["beam"] = self._beam_dicts(beam)
                    sufficient = self.check_sufficiency(
                        question, beam, depth, ledger, event
                    )
                    final_states = beam
                    if sufficient:
                        answer_text, raw = self.answer(
                            question, beam, False, ledger, trace.warnings
                        )
                        outcome = Outcome(
                            answer=answer_text,
                            raw_reply=raw,
                            fallback=False,
                            depth_reached=depth,
                            paths=self._beam_dicts(beam),
                            ledger=ledger,
                        )
                else:
                    pendings = self.togr_entity_search(pendings, event)
                    sufficient = self.check_sufficiency(
                        question, pendings, depth, ledger, event
                    )
                    if sufficient:
                        rendered_states = [
                            chain_from_dict(d) for d in (
                                _pending_chain_dict(p) for p in pendings
                            )
                        ]
                        answer_text, raw = self.answer(
                            question, pendings, False, ledger, trace.warnings
                        )
                        outcome = Outcome(
                            answer=answer_text,
                            raw_reply=raw,
                            fallback=False,
                            depth_reached=depth,
                            paths=[chain_to_dict(c) for c in rendered_states],
                            ledger=ledger,
                        )
                        event["beam"] = [chain_to_dict(c) for c in rendered_states]
                        final_states = rendered_states
                    else:
                        if config.entity_prune is EntityPruneMode.RANDOM:
                            beam = self.togr_random_prune(pendings, rng, event)
                        else:
                            beam = self.togr_scored_prune(
                                question, pendings, ledger, event
                            )
                        event["beam"] = self._beam_dicts(beam)
                        final_states = beam

                trace.depths.append(event)
                if outcome is not None:
                    break

            if outcome is None:
                answer_text, raw = self.answer(
                    question, final_states, True, ledger, trace.warnings
                )
                outcome = Outcome(
                    answer=answer_text,
                    raw_reply=raw,
                    fallback=True,
                    depth_reached=config.max_depth,
                    paths=self._beam_dicts(final_states),
                    ledger=ledger,
                )

            trace.outcome = outcome.as_dict()
            trace.ledger = ledger.as_dict()
            return outcome, trace
        except LLMUnavailableError as exc:
            trace.ledger = ledger.as_dict()
            raise EngineError(f"backend unavailable mid-run: {exc}", trace) from exc


def _mark_dead(state):
    if isinstance(state, (ReasoningPath, RelationChain)) and not state.dead_end:
        return replace(state, dead_end=True)
    return state


def _pending_chain_dict(pending: PendingExpansion) -> dict:
    base = pending.base
    relations = list(base.relations)
    if pending.relation is not None:
        relations.append((pending.relation, pending.direction))
    chain = RelationChain(
        origin=base.origin,
        relations=tuple(relations),
        tail=base.tail_entity,
        score=pending.score,
        dead_end=base.dead_end if pending.relation is None else False,
        frontier=pending.frontier,
    )
    return chain_to_dict(chain)


def replace_pending_score(pending: PendingExpansion, score: float) -> PendingExpansion:
    return replace(pending, score=score)


def random_prune(entity_ids: Sequence[str], n: int, rng: random.Random | int) -> list[str]:
    """Uniformly sample min(n, len) entity ids without replacement.

    Input order does not matter: candidates are sorted before sampling so
    the same seed always picks the same subset.
    """
    if isinstance(rng, int):
        rng = random.Random(rng)
    ordered = sorted(entity_ids)
    if len(ordered) <= n:
        return ordered
    return rng.sample(ordered, n)


# ===== Trace replay =====


def _replay_relation_stage(beam: list, event: dict, config: SearchConfig) -> list[PendingExpansion]:
    candidate_sets = next(
        c["sets"] for c in event["candidates"] if c["stage"] == "relations"
    )
    scored_sets = next(s["sets"] for s in event["scores"] if s["stage"] == "relations")
    expansions: list[_Candidate] = []
    for index, state in enumerate(beam):
        tokens = {
            t["token"]: (RelationRef(t["relation"]), Direction(t["direction"]))
            for t in candidate_sets[index]
        }
        if not tokens:
            carried = PendingExpansion(
                base=_mark_dead(state), relation=None, direction=None, score=state.score
            )
            expansions.append(
                _Candidate(
                    raw=state.score,
                    tie_text=render_state(carried, config.rendering),
                    identity=carried.identity(),
                    payload=carried,
                )
            )
            continue
        for item in scored_sets[index]:
            if item["name"] not in tokens:
                continue
            rel, direction = tokens[item["name"]]
            pending = PendingExpansion(
                base=state, relation=rel, direction=direction,
                score=state.score * item["score"],
            )
            expansions.append(
                _Candidate(
                    raw=state.score * item["score"],
                    tie_text=render_state(pending, config.rendering),
                    identity=pending.identity(),
                    payload=pending,
                )
            )
    selected, _warnings = _select_top(expansions, config.width)
    return [replace_pending_score(p, score) for p, score in selected]


def _replay_tog_entity_stage(
    pendings: list[PendingExpansion], event: dict, config: SearchConfig
) -> list[ReasoningPath]:
    candidate_sets = next(
        c["sets"] for c in event["candidates"] if c["stage"] == "entities"
    )
    scored_sets = next(s["sets"] for s in event["scores"] if s["stage"] == "entities")
    expansions: list[_Candidate] = []
    for i, pending in enumerate(pendings):
        if pending.relation is None:
            path = pending.base
            expansions.append(
                _Candidate(
                    raw=pending.score,
                    tie_text=render_state(path, config.rendering),
                    identity=path.identity(),
                    payload=path,
                )
            )
            continue
        entities = [_entity_from_dict(d) for d in candidate_sets[i]]
        if not entities:
            continue
        token_map = dict(entity_tokens(entities))
        for item in scored_sets[i]:
            entity = token_map.get(item["name"])
            if entity is None:
                continue
            path = ReasoningPath(
                origin=pending.base.origin,
                hops=pending.base.hops + (Hop(pending.relation, pending.direction, entity),),
                score=pending.score * item["score"],
            )
            expansions.append(
                _Candidate(
                    raw=pending.score * item["score"],
                    tie_text=render_path(path, config.rendering),
                    identity=path.identity(),
                    payload=path,
                )
            )
    selected, _warnings = _select_top(expansions, config.width)
    return [replace(path, score=score) for path, score in selected]


def verify_trace_replay(trace_doc: dict) -> None:
    """Check that each depth's beam snapshot re-derives from the previous one.

    Raises ReplayError on the first divergence. Chain-variant sampling is
    reproduced from the recorded sampled ids rather than re-drawn.
    """
    config = search_config_from_dict(trace_doc["config"])
    is_chain = config.variant is Variant.TOG_R
    from_dict = chain_from_dict if is_chain else path_from_dict

    for event in trace_doc["depths"]:
        beam = [from_dict(d) for d in event["beam_before"]]
        pendings = _replay_relation_stage(beam, event, config)
        recorded_mid = event.get("mid_beam")
        if not is_chain:
            derived_mid = [_pending_to_dict(p, config.rendering) for p in pendings]
            if derived_mid != recorded_mid:
                raise ReplayError(
                    f"depth {event['depth']}: relation stage diverges from recording"
                )
            if event.get("reverted"):
                derived_beam = event["beam_before"]
            else:
                derived = _replay_tog_entity_stage(pendings, event, config)
                derived_beam = [path_to_dict(p) for p in derived]
            if "beam" in event and derived_beam != event["beam"]:
                raise ReplayError(
                    f"depth {event['depth']}: entity stage diverges from recording"
                )
        else:
            # frontier attachment and sampling are replayed from the record
            frontier_sets = next(
                c["sets"] for c in event["candidates"] if c["stage"] == "entities"
            )
            rebuilt: list[PendingExpansion] = []
            for pending, frontier in zip(pendings, frontier_sets):
                entities = tuple(_entity_from_dict(d) for d in frontier)
                if pending.relation is not None and not entities:
                    rebuilt.append(
                        PendingExpansion(
                            base=_mark_dead(pending.base), relation=None,
                            direction=None, score=pending.score,
                        )
                    )
                else:
                    rebuilt.append(replace(pending, frontier=entities))
            derived_mid = [_pending_to_dict(p, config.rendering) for p in rebuilt]
            if derived_mid != recorded_mid:
                raise ReplayError(
                    f"depth {event['depth']}: chain relation stage diverges"
                )
            if event.get("sufficient"):
                continue
            if "sampled" in event:
                pool: dict[str, tuple[PendingExpansion, EntityRef]] = {}
                for pending in sorted(rebuilt, key=lambda p: -p.score):
                    for entity in pending.frontier:
                        if entity.id not in pool:
                            pool[entity.id] = (pending, entity)
                candidates: list[_Candidate] = []
                for entity_id in event["sampled"]:
                    pending, entity = pool[entity_id]
                    chain = RelationChain(
                        origin=pending.base.origin,
                        relations=pending.base.relations
                        + (((pending.relation, pending.direction),)
                           if pending.relation else ()),
                        tail=entity,
                        score=pending.score,
                    )
                    candidates.append(
                        _Candidate(
                            raw=pending.score,
                            tie_text=render_path(chain, config.rendering) + f" @{entity.id}",
                            identity=chain.identity(),
                            payload=chain,
                        )
                    )
                for pending in rebuilt:
                    if pending.relation is None:
                        chain = pending.base
                        candidates.append(
                            _Candidate(
                                raw=pending.score,
                                tie_text=render_path(chain, config.rendering)
                                + f" @{chain.tail_entity.id}",
                                identity=chain.identity(),
                                payload=chain,
                            )
                        )
                selected, _w = _select_top(candidates, config.width)
                derived_beam = [
                    chain_to_dict(replace(chain, score=score)) for chain, score in selected
                ]
                if "beam" in event and derived_beam != event["beam"]:
                    raise ReplayError(
                        f"depth {event['depth']}: sampled chain stage diverges"
                    )


def beam_score_sum(states: Iterable) -> float:
    return math.fsum(s.score for s in states)
