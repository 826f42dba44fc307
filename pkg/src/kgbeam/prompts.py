"""Prompt construction and reply parsing.

Every LLM-facing text in the system is built here: path renderings, the
per-role prompt templates (instruction header + few-shot exemplar block +
query block), and the parsers that turn free-text replies back into scores,
verdicts and answers.

Exemplar blocks live in editable text assets under assets/exemplars/ and are
inserted verbatim, so prompt bytes are stable and testable against goldens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .kg import Direction, EntityRef

ARROW = " → "  # separator used in sequence renderings: " → "


class PromptParseError(ValueError):
    """Raised when a reply contains nothing the parser can use."""


class RenderingError(ValueError):
    """Raised when a path cannot be rendered in the requested format."""


class PathRendering(str, Enum):
    TRIPLES = "triples"
    SEQUENCES = "sequences"
    SENTENCES = "sentences"


class PromptKind(str, Enum):
    TOPIC_EXTRACT = "topic_extract"
    RELATION_PRUNE = "relation_prune"
    ENTITY_PRUNE = "entity_prune"
    SUFFICIENCY = "sufficiency"
    ANSWER_GEN = "answer_gen"
    TOGR_REASON = "togr_reason"
    COT_BASELINE = "cot"
    IO_BASELINE = "io"


@dataclass(frozen=True)
class ScoredItem:
    """A candidate name with its (normalized) score."""

    name: str
    score: float


# ===== Instruction headers =====
# The {k} slots in RELATION_PRUNE are filled at build time.

_INSTRUCTIONS: dict[PromptKind, str] = {
    PromptKind.TOPIC_EXTRACT: (
        "Please extract the topic entities mentioned in the question (separated by "
        "semicolon) and rate each entity's contribution to answering the question on "
        "a scale from 0 to 1 (the sum of the scores is 1)."
    ),
    PromptKind.RELATION_PRUNE: (
        "Please retrieve {k} relations (separated by semicolon) that contribute to "
        "the question and rate their contribution on a scale from 0 to 1 (the sum of "
        "the scores of {k} relations is 1)."
    ),
    PromptKind.ENTITY_PRUNE: (
        "Please score the entities' contribution to the question on a scale from 0 "
        "to 1 (the sum of the scores of all entities is 1)."
    ),
    PromptKind.SUFFICIENCY: (
        "Given a question and the associated retrieved knowledge graph triples "
        "(entity, relation, entity), you are asked to answer whether it's sufficient "
        "for you to answer the question with these triples and your knowledge (Yes "
        "or No)."
    ),
    PromptKind.ANSWER_GEN: (
        "Given a question and the associated retrieved knowledge graph triples "
        "(entity, relation, entity), you are asked to answer the question with these "
        "triples and your own knowledge."
    ),
    PromptKind.TOGR_REASON: (
        "Please answer the question using Topic Entity, Relations Chains and their "
        "Candidate Entities that contribute to the question, you are asked to answer "
        "whether it's sufficient for you to answer the question with these triples "
        "and your knowledge (Yes or No)."
    ),
}

# Answer cue each prompt ends with; the model's continuation starts right after.
_CUES: dict[PromptKind, str] = {
    PromptKind.TOPIC_EXTRACT: "A:",
    PromptKind.RELATION_PRUNE: "A:",
    PromptKind.ENTITY_PRUNE: "Score:",
    PromptKind.SUFFICIENCY: "A:",
    PromptKind.ANSWER_GEN: "A:",
    PromptKind.TOGR_REASON: "A:",
    PromptKind.COT_BASELINE: "A:",
    PromptKind.IO_BASELINE: "A:",
}

_EXEMPLAR_FILES: dict[PromptKind, str] = {
    PromptKind.TOPIC_EXTRACT: "topic_extract.txt",
    PromptKind.RELATION_PRUNE: "relation_prune.txt",
    PromptKind.ENTITY_PRUNE: "entity_prune.txt",
    PromptKind.SUFFICIENCY: "sufficiency.txt",
    PromptKind.ANSWER_GEN: "answer_gen.txt",
    PromptKind.TOGR_REASON: "togr_reason.txt",
    PromptKind.COT_BASELINE: "cot.txt",
    PromptKind.IO_BASELINE: "io.txt",
}


@lru_cache(maxsize=None)
def exemplar_block(kind: PromptKind) -> str:
    """The few-shot exemplar block for a prompt kind, stripped of outer whitespace."""
    name = _EXEMPLAR_FILES[kind]
    path = resources.files("kgbeam").joinpath(f"assets/exemplars/{name}")
    return path.read_text(encoding="utf-8").strip()


# ===== Path rendering =====


def _hop_triple(prev: EntityRef, hop) -> tuple[str, str, str]:
    """Display (subject, relation, object) of the stored triple behind a hop."""
    if hop.direction is Direction.OUTWARD:
        return (prev.display, hop.relation.name, hop.entity.display)
    return (hop.entity.display, hop.relation.name, prev.display)


def render_path(path, rendering: PathRendering) -> str:
    """Render a reasoning path or relation chain to prompt text.

    Entity paths (objects with `.origin` and `.hops`) support all three
    renderings. Relation chains (`.origin`, `.relations`, `.frontier`) omit
    intermediate entities and therefore cannot be rendered as triples.
    """
    if path is None:
        return ""
    if hasattr(path, "hops"):
        return _render_entity_path(path, rendering)
    if hasattr(path, "relations"):
        return _render_chain(path, rendering)
    raise TypeError(f"cannot render object of type {type(path).__name__}")


def _render_entity_path(path, rendering: PathRendering) -> str:
    origin: EntityRef = path.origin
    hops = list(path.hops)
    if not hops:
        return origin.display
    if rendering is PathRendering.TRIPLES:
        parts = []
        prev = origin
        for hop in hops:
            s, r, o = _hop_triple(prev, hop)
            parts.append(f"({s}, {r}, {o})")
            prev = hop.entity
        return ", ".join(parts)
    if rendering is PathRendering.SEQUENCES:
        parts = [origin.display]
        for hop in hops:
            parts.append(hop.relation.name)
            parts.append(hop.entity.display)
        return ARROW.join(parts)
    if rendering is PathRendering.SENTENCES:
        sentences = []
        prev = origin
        for hop in hops:
            s, r, o = _hop_triple(prev, hop)
            if hop.direction is Direction.OUTWARD:
                sentences.append(f"The {r} of {s} is {o}.")
            else:
                sentences.append(f"{s} is the {r} of {o}.")
            prev = hop.entity
        return " ".join(sentences)
    raise RenderingError(f"unknown rendering: {rendering}")


def _render_chain(chain, rendering: PathRendering) -> str:
    origin: EntityRef = chain.origin
    relations = list(chain.relations)
    frontier = list(getattr(chain, "frontier", ()) or ())
    if rendering is PathRendering.TRIPLES:
        raise RenderingError("relation chains omit intermediate entities; "
                             "triples rendering is unsupported")
    if not relations:
        return origin.display
    if rendering is PathRendering.SEQUENCES:
        parts = [origin.display] + [rel.name for rel, _direction in relations]
        text = ARROW.join(parts)
        if frontier:
            text += ARROW + "{" + ", ".join(e.display for e in frontier) + "}"
        return text
    if rendering is PathRendering.SENTENCES:
        # Intermediate entities are unknown by construction, so hops chain
        # through positional placeholders X1, X2, ...
        sentences = []
        prev = origin.display
        for index, (rel, direction) in enumerate(relations, start=1):
            var = f"X{index}"
            if direction is Direction.OUTWARD:
                sentences.append(f"The {rel.name} of {prev} is {var}.")
            else:
                sentences.append(f"{var} is the {rel.name} of {prev}.")
            prev = var
        if frontier:
            names = ", ".join(e.display for e in frontier)
            sentences.append(f"Candidates for {prev}: {names}.")
        return " ".join(sentences)
    raise RenderingError(f"unknown rendering: {rendering}")


def render_beam(paths: Iterable, rendering: PathRendering) -> str:
    """Render several paths, one per line, highest-scored first as given."""
    return "\n".join(render_path(p, rendering) for p in paths)


# ===== Prompt construction =====


def _join_candidates(candidates: Sequence[str]) -> str:
    return "; ".join(candidates)


def build_prompt(
    kind: PromptKind,
    question: str,
    context: Mapping[str, object] | None = None,
    k: int | None = None,
) -> str:
    """Assemble the full prompt for a role.

    `context` keys by kind:
      RELATION_PRUNE: topic (str), candidates (sequence of str)
      ENTITY_PRUNE:   relation (str), candidates (sequence of str)
      SUFFICIENCY / ANSWER_GEN: paths (str, rendered, may be multi-line)
      TOGR_REASON:    chains (str, rendered)
      TOPIC_EXTRACT / COT_BASELINE / IO_BASELINE: none
    """
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    context = context or {}

    def need(key: str) -> object:
        if key not in context:
            raise ValueError(f"{kind.value} prompt requires context[{key!r}]")
        return context[key]

    if kind is PromptKind.RELATION_PRUNE:
        if not k or k < 1:
            raise ValueError("relation prune prompt requires k >= 1")
        query = (
            f"Q: {question}\n"
            f"Topic Entity: {need('topic')}\n"
            f"Relations: {_join_candidates(list(need('candidates')))}"
        )
    elif kind is PromptKind.ENTITY_PRUNE:
        query = (
            f"Q: {question}\n"
            f"Relation: {need('relation')}\n"
            f"Entites: {_join_candidates(list(need('candidates')))}"
        )
    elif kind in (PromptKind.SUFFICIENCY, PromptKind.ANSWER_GEN):
        query = f"Q: {question}\nKnowledge triples: {need('paths')}"
    elif kind is PromptKind.TOGR_REASON:
        query = (
            f"Q: {question}\n"
            f"Topic Entity, with relations chains, and their candidate entities: "
            f"{need('chains')}"
        )
    else:
        query = f"Q: {question}"

    sections = []
    instruction = _INSTRUCTIONS.get(kind)
    if instruction:
        if kind is PromptKind.RELATION_PRUNE:
            instruction = instruction.format(k=k)
        sections.append(instruction)
    sections.append(exemplar_block(kind))
    sections.append(f"{query}\n{_CUES[kind]}")
    return "\n\n".join(sections)


def build_unified_prompt(
    kind: PromptKind,
    question: str,
    contexts: Sequence,
    candidate_sets: Sequence[Sequence[str]],
    k: int,
) -> str:
    """One prompt scoring all candidate sets of a prune step at once.

    The reply is expected to answer each set on its own line in the form
    "Set i: name (Score: x); ...", which keeps the per-set reply parseable
    with the ordinary scored-list parser.
    """
    if kind not in (PromptKind.RELATION_PRUNE, PromptKind.ENTITY_PRUNE):
        raise ValueError(f"unified prompts only support prune kinds, got {kind.value}")
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    noun = "relations" if kind is PromptKind.RELATION_PRUNE else "entities"
    instruction = (
        f"For each numbered set below, retrieve at most {k} {noun} (separated by "
        f"semicolon) that contribute to the question and rate their contribution on "
        f"a scale from 0 to 1 (the sum of the scores within each set is 1). Answer "
        f"one line per set, in the form \"Set i: name (Score: x); ...\"."
    )
    blocks = [instruction, exemplar_block(kind), f"Q: {question}"]
    for index, (context, candidates) in enumerate(zip(contexts, candidate_sets), start=1):
        if kind is PromptKind.RELATION_PRUNE:
            topic = getattr(context, "path_text", "") or ""
            blocks.append(
                f"Set {index}:\nTopic Entity: {topic}\n"
                f"Relations: {_join_candidates(list(candidates))}"
            )
        else:
            relation = getattr(context, "relation", "") or ""
            blocks.append(
                f"Set {index}:\nRelation: {relation}\n"
                f"Entites: {_join_candidates(list(candidates))}"
            )
    blocks.append("A:")
    return "\n\n".join(blocks)


# ===== Reply parsing =====

_NUMBER = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"
_PAREN_SCORE = re.compile(
    rf"^(?P<name>.+?)\s*\(\s*score\s*[:=]?\s*(?P<val>{_NUMBER})\s*\)\s*[.,]?$",
    re.IGNORECASE,
)
_DASH_SCORE = re.compile(rf"^(?P<name>.+?)\s+-\s+(?P<val>{_NUMBER})\s*[.,]?$")
_COLON_SCORE = re.compile(rf"^(?P<name>.+?)\s*:\s*(?P<val>{_NUMBER})\s*[.,]?$")
_ENUMERATION = re.compile(r"^\d+[.)]\s*")
_VERDICT = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_ANSWER_MARKER = re.compile(r"the\s+answer\s+is", re.IGNORECASE)


def _normalize_name(name: str) -> str:
    return re.sub(r"\s+", " ", name).strip().casefold()


_ECHOED_CUE = re.compile(r"^\s*(a|score)\s*:\s*", re.IGNORECASE)


def _strip_cue(reply: str) -> str:
    # Models frequently echo the answer cue ("A: ...") before the payload.
    return _ECHOED_CUE.sub("", reply, count=1)


def _clean_name(name: str) -> str:
    name = _ENUMERATION.sub("", name.strip())
    return name.strip(" \t'\"{}[]")


def parse_scored_list(
    reply: str, candidates: Sequence[str], k: int | None = None
) -> list[ScoredItem]:
    """Extract (candidate, score) pairs from a scoring reply.

    Accepted per-item syntaxes (items separated by ';' or newlines):
      "name (Score: 0.5)"    "name - 0.5"    "name: 0.5"

    Names are matched to `candidates` case-insensitively (exact normalized
    match first, then candidate-contained-in-name). Unknown names are
    dropped, duplicates keep the first occurrence, scores are clamped to
    [0, 1], the list is truncated to `k` items in reply order, and the
    surviving scores are renormalized to sum 1 (uniform if they sum to 0).

    Raises PromptParseError when no usable (candidate, score) pair remains.
    """
    normalized_candidates = [(c, _normalize_name(c)) for c in candidates]

    def match_candidate(name: str) -> str | None:
        norm = _normalize_name(name)
        for original, norm_cand in normalized_candidates:
            if norm == norm_cand:
                return original
        for original, norm_cand in normalized_candidates:
            if norm_cand and norm_cand in norm:
                return original
        return None

    items: list[ScoredItem] = []
    seen: set[str] = set()
    for segment in re.split(r"[;\n]", _strip_cue(reply)):
        segment = segment.strip()
        if not segment:
            continue
        match = (
            _PAREN_SCORE.match(segment)
            or _DASH_SCORE.match(segment)
            or _COLON_SCORE.match(segment)
        )
        if not match:
            continue
        candidate = match_candidate(_clean_name(match.group("name")))
        if candidate is None or candidate in seen:
            continue
        seen.add(candidate)
        score = min(1.0, max(0.0, float(match.group("val"))))
        items.append(ScoredItem(candidate, score))

    if k is not None:
        items = items[:k]
    if not items:
        raise PromptParseError("no candidate scores could be parsed from reply")
    total = sum(item.score for item in items)
    if total <= 0.0:
        uniform = 1.0 / len(items)
        return [ScoredItem(item.name, uniform) for item in items]
    return [ScoredItem(item.name, item.score / total) for item in items]


def parse_loose_scores(reply: str) -> list[ScoredItem]:
    """Like parse_scored_list but without a candidate list (topic extraction).

    Returns raw names with clamped scores; no renormalization. Items that do
    not match any score syntax are skipped; an empty result is allowed.
    """
    items: list[ScoredItem] = []
    seen: set[str] = set()
    for segment in re.split(r"[;\n]", _strip_cue(reply)):
        segment = segment.strip()
        if not segment:
            continue
        match = (
            _PAREN_SCORE.match(segment)
            or _DASH_SCORE.match(segment)
            or _COLON_SCORE.match(segment)
        )
        if not match:
            continue
        name = _clean_name(match.group("name"))
        if not name or name.casefold() in seen:
            continue
        seen.add(name.casefold())
        items.append(ScoredItem(name, min(1.0, max(0.0, float(match.group("val"))))))
    return items


def parse_verdict(reply: str) -> bool:
    """True iff the first standalone yes/no token in the reply is 'yes'.

    Replies with no such token default to False (insufficient).
    """
    match = _VERDICT.search(reply)
    return bool(match) and match.group(1).casefold() == "yes"


def _strip_terminal_period(text: str) -> str:
    # A terminal period is dropped unless it looks like part of an
    # abbreviation ("D.C." stays intact, "Massachusetts." does not).
    if text.endswith(".") and not (len(text) >= 2 and text[-2].isupper()):
        return text[:-1]
    return text


def parse_answer(reply: str) -> str:
    """Extract the final answer string from a generation reply.

    Prefers the text after the last "the answer is" marker (up to end of
    line); otherwise returns the whole reply. Echoed "A:" prefixes,
    surrounding quotes and a terminal sentence period are stripped.
    """
    text = reply.strip()
    if text.lower().startswith("a:"):
        text = text[2:].strip()
    matches = list(_ANSWER_MARKER.finditer(text))
    if matches:
        tail = text[matches[-1].end():]
        tail = tail.split("\n", 1)[0]
        text = tail.strip().lstrip(":,").strip()
    text = text.strip("'\"")
    return _strip_terminal_period(text)
