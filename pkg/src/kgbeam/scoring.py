"""Pluggable scoring and reasoning backends.

Two capabilities drive the search engine:

  PruneScorer  — scores candidate relations/entities against the question
                 (used by the exploration steps);
  Reasoner     — extracts topic entities, judges whether the collected
                 evidence suffices, and generates the final answer.

Backends:
  ScriptedBackend   deterministic lookup tables, records every call (tests)
  LexicalScorer     BM25-style literal-overlap scoring, no LLM involved
  EmbeddingScorer   cosine similarity over a preloaded vector table
  RemoteLLMBackend  chat-completion HTTP endpoint implementing both roles
"""

from __future__ import annotations

import hashlib
import math
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
import requests

from .prompts import (
    PromptKind,
    PromptParseError,
    ScoredItem,
    build_prompt,
    parse_answer,
    parse_loose_scores,
    parse_scored_list,
    parse_verdict,
)

DEFAULT_EXPLORATION_TEMPERATURE = 0.4
DEFAULT_REASONING_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 256


class ConfigurationError(ValueError):
    """A backend is missing something it needs (e.g. a vector)."""


class LLMUnavailableError(RuntimeError):
    """The remote endpoint could not be reached within the retry budget."""


class PruneKind(str, Enum):
    RELATION = "relation"
    ENTITY = "entity"


@dataclass(frozen=True)
class PruneContext:
    """What the scorer may condition on besides the question.

    `path_text` is the rendered path (or topic entity) the candidates hang
    off; `relation` is set for entity pruning (the relation just followed).
    """

    path_text: str = ""
    relation: str | None = None


def context_digest(*parts: object) -> str:
    """Stable digest used to key scripted lookups by prompt context."""
    joined = "\x1f".join(str(p) for p in parts)
    return hashlib.sha1(joined.encode("utf-8")).hexdigest()[:16]


class _WarningSink:
    """Collects warnings for the engine to drain into the trace."""

    def __init__(self) -> None:
        self._warnings: list[str] = []

    def warn(self, message: str) -> None:
        self._warnings.append(message)

    def drain_warnings(self) -> list[str]:
        drained, self._warnings = self._warnings, []
        return drained


class PruneScorer(Protocol):
    def score_candidates(
        self,
        question: str,
        context: PruneContext,
        candidates: Sequence[str],
        k: int,
        kind: PruneKind,
    ) -> list[ScoredItem]:
        """Score candidates; returns at most k items with scores summing to 1."""
        ...

    def score_candidate_sets(
        self,
        question: str,
        contexts: Sequence[PruneContext],
        candidate_sets: Sequence[Sequence[str]],
        k: int,
        kind: PruneKind,
    ) -> list[list[ScoredItem]]:
        """Score several candidate sets in one backend call (unified mode)."""
        ...

    def drain_warnings(self) -> list[str]: ...


class Reasoner(Protocol):
    def extract_topics(self, question: str) -> list[ScoredItem]: ...

    def judge_sufficiency(
        self, question: str, rendered: str, chains: bool = False, depth: int | None = None
    ) -> bool: ...

    def generate_answer(
        self, question: str, rendered: str, with_paths: bool, chains: bool = False
    ) -> str: ...

    def drain_warnings(self) -> list[str]: ...


def _uniform(candidates: Sequence[str], k: int) -> list[ScoredItem]:
    chosen = list(candidates)[: max(k, 0)]
    if not chosen:
        return []
    share = 1.0 / len(chosen)
    return [ScoredItem(name, share) for name in chosen]


def _renormalize(items: Sequence[ScoredItem]) -> list[ScoredItem]:
    total = sum(item.score for item in items)
    if total <= 0.0:
        return _uniform([item.name for item in items], len(items))
    return [ScoredItem(item.name, item.score / total) for item in items]


# ===== Scripted backend =====


class ScriptedBackend(_WarningSink):
    """Deterministic backend for tests: canned replies keyed by role/question.

    Lookup order for scores and answers is (role, question, digest) then
    (role, question, "*"). Missing score entries fall back to uniform scores
    over the first k candidates; missing verdicts default to insufficient;
    missing answers default to a fixed refusal.

    `answer_policy="tail_echo"` makes generation answer with the tail entity
    of the first rendered path (handy when the answer must track corrections).
    Every invocation is appended to `.calls`.
    """

    DEFAULT_ANSWER = "I don't know."

    def __init__(self, answer_policy: str = "lookup") -> None:
        super().__init__()
        if answer_policy not in ("lookup", "tail_echo"):
            raise ValueError(f"unknown answer policy: {answer_policy}")
        self._scores: dict[tuple[str, str, str], list[ScoredItem]] = {}
        self._topics: dict[str, list[ScoredItem]] = {}
        self._verdicts: dict[str, object] = {}
        self._answers: dict[tuple[str, str], str] = {}
        self._answer_policy = answer_policy
        self.calls: list[dict[str, object]] = []
        self._call_lock = threading.Lock()

    # -- scripting helpers --

    def script_scores(
        self,
        question: str,
        items: Sequence[ScoredItem | tuple[str, float]],
        kind: PruneKind = PruneKind.RELATION,
        digest: str = "*",
    ) -> None:
        scored = [i if isinstance(i, ScoredItem) else ScoredItem(*i) for i in items]
        self._scores[(kind.value, question, digest)] = scored

    def script_topics(self, question: str, items: Sequence[ScoredItem | tuple[str, float]]) -> None:
        self._topics[question] = [
            i if isinstance(i, ScoredItem) else ScoredItem(*i) for i in items
        ]

    def script_verdict(self, question: str, verdict: bool | Mapping[int, bool]) -> None:
        """Verdict for a question: a bool, or a {depth: bool} map (default No)."""
        self._verdicts[question] = verdict

    def script_answer(self, question: str, answer: str, digest: str = "*") -> None:
        self._answers[(question, digest)] = answer

    # -- recording --

    def _record(self, role: str, question: str, **details: object) -> None:
        with self._call_lock:
            self.calls.append({"role": role, "question": question, **details})

    def calls_for(self, role: str) -> list[dict[str, object]]:
        with self._call_lock:
            return [c for c in self.calls if c["role"] == role]

    # -- PruneScorer --

    def _lookup_scores(
        self, question: str, digest: str, kind: PruneKind
    ) -> list[ScoredItem] | None:
        entry = self._scores.get((kind.value, question, digest))
        if entry is None:
            entry = self._scores.get((kind.value, question, "*"))
        return entry

    def _resolve_scores(
        self,
        question: str,
        context: PruneContext,
        candidates: Sequence[str],
        k: int,
        kind: PruneKind,
    ) -> list[ScoredItem]:
        digest = context_digest(context.path_text, context.relation, *candidates)
        canned = self._lookup_scores(question, digest, kind)
        if canned is None:
            return _uniform(candidates, k)
        available = {c for c in candidates}
        matched = [item for item in canned if item.name in available]
        # the table is a score lookup, not an ordered reply: best k win
        kept = sorted(matched, key=lambda i: (-i.score, i.name))[:k]
        if not kept:
            return _uniform(candidates, k)
        return _renormalize(kept)

    def score_candidates(
        self,
        question: str,
        context: PruneContext,
        candidates: Sequence[str],
        k: int,
        kind: PruneKind,
    ) -> list[ScoredItem]:
        self._record(
            f"{kind.value}_prune", question, candidates=list(candidates), k=k
        )
        return self._resolve_scores(question, context, candidates, k, kind)

    def score_candidate_sets(
        self,
        question: str,
        contexts: Sequence[PruneContext],
        candidate_sets: Sequence[Sequence[str]],
        k: int,
        kind: PruneKind,
    ) -> list[list[ScoredItem]]:
        self._record(
            f"{kind.value}_prune_unified",
            question,
            sets=[list(c) for c in candidate_sets],
            k=k,
        )
        return [
            self._resolve_scores(question, ctx, cands, k, kind)
            for ctx, cands in zip(contexts, candidate_sets)
        ]

    # -- Reasoner --

    def extract_topics(self, question: str) -> list[ScoredItem]:
        self._record("topic_extract", question)
        return list(self._topics.get(question, []))

    def judge_sufficiency(
        self, question: str, rendered: str, chains: bool = False, depth: int | None = None
    ) -> bool:
        self._record("sufficiency", question, depth=depth)
        entry = self._verdicts.get(question, False)
        if isinstance(entry, bool):
            return entry
        if isinstance(entry, Mapping):
            return bool(entry.get(depth, False))
        if callable(entry):
            return bool(entry(rendered, depth))
        return False

    def generate_answer(
        self, question: str, rendered: str, with_paths: bool, chains: bool = False
    ) -> str:
        self._record("generate", question, with_paths=with_paths)
        if self._answer_policy == "tail_echo" and with_paths and rendered.strip():
            tail = _tail_of_rendered(rendered)
            if tail:
                return f"The answer is {tail}."
        digest = context_digest(rendered)
        answer = self._answers.get((question, digest))
        if answer is None:
            answer = self._answers.get((question, "*"))
        return answer if answer is not None else self.DEFAULT_ANSWER


def _tail_of_rendered(rendered: str) -> str | None:
    """Tail entity of the first rendered path line (triples or sequences)."""
    first = rendered.strip().splitlines()[0].strip()
    if first.endswith(")") and "(" in first:
        inner = first[first.rfind("(") + 1 : -1]
        parts = inner.split(", ")
        return parts[-1].strip() if parts else None
    if "→" in first:
        return first.split("→")[-1].strip().strip("{}")
    return None


# ===== Lexical scorer =====


def _tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


class LexicalScorer(_WarningSink):
    """Question/candidate overlap scoring in the BM25 style.

    Each candidate name is a one-line document; the question is the query.
    With no token overlap at all the scorer degenerates to uniform scores
    over the first k candidates in lexicographic order.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75) -> None:
        super().__init__()
        self.k1 = k1
        self.b = b

    def _bm25(self, question: str, candidates: Sequence[str]) -> list[float]:
        docs = [_tokenize(c) for c in candidates]
        n_docs = len(docs)
        avgdl = sum(len(d) for d in docs) / n_docs if n_docs else 0.0
        df: dict[str, int] = {}
        for doc in docs:
            for term in set(doc):
                df[term] = df.get(term, 0) + 1
        scores = []
        query_terms = _tokenize(question)
        for doc in docs:
            score = 0.0
            length_norm = self.k1 * (1 - self.b + self.b * len(doc) / avgdl) if avgdl else 0.0
            for term in query_terms:
                tf = doc.count(term)
                if tf == 0:
                    continue
                idf = math.log(1 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
                score += idf * tf * (self.k1 + 1) / (tf + length_norm)
            scores.append(score)
        return scores

    def score_candidates(
        self,
        question: str,
        context: PruneContext,
        candidates: Sequence[str],
        k: int,
        kind: PruneKind,
    ) -> list[ScoredItem]:
        if not candidates:
            return []
        raw = self._bm25(question, candidates)
        if sum(raw) <= 0.0:
            return _uniform(sorted(candidates), k)
        ranked = sorted(zip(candidates, raw), key=lambda t: (-t[1], t[0]))[:k]
        return _renormalize([ScoredItem(name, score) for name, score in ranked])

    def score_candidate_sets(
        self,
        question: str,
        contexts: Sequence[PruneContext],
        candidate_sets: Sequence[Sequence[str]],
        k: int,
        kind: PruneKind,
    ) -> list[list[ScoredItem]]:
        return [
            self.score_candidates(question, ctx, cands, k, kind)
            for ctx, cands in zip(contexts, candidate_sets)
        ]


# ===== Embedding scorer =====


def load_vector_table(path: str) -> dict[str, np.ndarray]:
    """Load "name<TAB>v1,v2,..." lines into a vector table."""
    table: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            name, _, values = line.partition("\t")
            if not values:
                raise ConfigurationError(f"vector line without values: {line!r}")
            table[name] = np.asarray([float(v) for v in values.split(",")], dtype=float)
    return table


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class EmbeddingScorer(_WarningSink):
    """Cosine similarity against a fixed vector table, softmax-normalized.

    The question and every candidate must be present in the table; a missing
    vector is a configuration error naming the offender.
    """

    def __init__(self, vectors: Mapping[str, np.ndarray]) -> None:
        super().__init__()
        self._vectors = dict(vectors)

    def _vector(self, name: str) -> np.ndarray:
        try:
            return self._vectors[name]
        except KeyError:
            raise ConfigurationError(f"no vector for {name!r}") from None

    def score_candidates(
        self,
        question: str,
        context: PruneContext,
        candidates: Sequence[str],
        k: int,
        kind: PruneKind,
    ) -> list[ScoredItem]:
        if not candidates:
            return []
        question_vec = self._vector(question)
        sims = np.asarray([_cosine(question_vec, self._vector(c)) for c in candidates])
        weights = np.exp(sims - sims.max())  # softmax, temperature 1
        weights = weights / weights.sum()
        ranked = sorted(
            zip(candidates, weights.tolist()), key=lambda t: (-t[1], t[0])
        )[:k]
        return _renormalize([ScoredItem(name, w) for name, w in ranked])

    def score_candidate_sets(
        self,
        question: str,
        contexts: Sequence[PruneContext],
        candidate_sets: Sequence[Sequence[str]],
        k: int,
        kind: PruneKind,
    ) -> list[list[ScoredItem]]:
        return [
            self.score_candidates(question, ctx, cands, k, kind)
            for ctx, cands in zip(contexts, candidate_sets)
        ]


# ===== Remote LLM backend =====

Transport = Callable[[str, dict, float], dict]


def _requests_transport(url: str, payload: dict, timeout_s: float) -> dict:
    response = requests.post(url, json=payload, timeout=timeout_s)
    response.raise_for_status()
    return response.json()


@dataclass
class LLMConfig:
    endpoint: str
    model: str = "gpt-3.5-turbo"
    exploration_temperature: float = DEFAULT_EXPLORATION_TEMPERATURE
    reasoning_temperature: float = DEFAULT_REASONING_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    retry_limit: int = 3
    timeout_s: float = 60.0
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


class RemoteLLMBackend(_WarningSink):
    """Chat-completion style HTTP backend implementing scorer and reasoner.

    Exploration calls (pruning) run at the exploration temperature; reasoning
    calls (topics, sufficiency, generation) run at the reasoning temperature.
    Replies that fail to parse as scores are retried up to the retry limit,
    then replaced by a uniform fallback (recorded as a warning).
    """

    def __init__(self, config: LLMConfig, transport: Transport | None = None) -> None:
        super().__init__()
        self.config = config
        self._transport = transport or _requests_transport

    def complete(self, prompt: str, temperature: float) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": self.config.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.retry_limit):
            try:
                raw = self._transport(self.config.endpoint, payload, self.config.timeout_s)
                return raw["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise LLMUnavailableError(f"malformed completion response: {exc}") from exc
            except Exception as exc:  # transport-level failure
                last_error = exc
                if attempt + 1 < self.config.retry_limit:
                    time.sleep(self.config.backoff_s * (2**attempt))
        raise LLMUnavailableError(f"endpoint unreachable: {last_error}")

    # -- PruneScorer --

    def _prune_prompt(
        self,
        question: str,
        context: PruneContext,
        candidates: Sequence[str],
        k: int,
        kind: PruneKind,
    ) -> str:
        if kind is PruneKind.RELATION:
            return build_prompt(
                PromptKind.RELATION_PRUNE,
                question,
                {"topic": context.path_text, "candidates": list(candidates)},
                k=k,
            )
        return build_prompt(
            PromptKind.ENTITY_PRUNE,
            question,
            {"relation": context.relation or "", "candidates": list(candidates)},
        )

    def score_candidates(
        self,
        question: str,
        context: PruneContext,
        candidates: Sequence[str],
        k: int,
        kind: PruneKind,
    ) -> list[ScoredItem]:
        if not candidates:
            return []
        prompt = self._prune_prompt(question, context, candidates, k, kind)
        for _attempt in range(self.config.retry_limit):
            reply = self.complete(prompt, self.config.exploration_temperature)
            try:
                return parse_scored_list(reply, candidates, k)
            except PromptParseError:
                continue
        self.warn(
            f"{kind.value} prune reply unparseable after "
            f"{self.config.retry_limit} attempts; using uniform scores"
        )
        return _uniform(candidates, k)

    def score_candidate_sets(
        self,
        question: str,
        contexts: Sequence[PruneContext],
        candidate_sets: Sequence[Sequence[str]],
        k: int,
        kind: PruneKind,
    ) -> list[list[ScoredItem]]:
        from .prompts import build_unified_prompt  # local import: optional surface

        if not candidate_sets:
            return []
        prompt = build_unified_prompt(
            PromptKind.RELATION_PRUNE if kind is PruneKind.RELATION else PromptKind.ENTITY_PRUNE,
            question,
            contexts,
            candidate_sets,
            k,
        )
        reply = self.complete(prompt, self.config.exploration_temperature)
        sections = _split_unified_reply(reply, len(candidate_sets))
        results: list[list[ScoredItem]] = []
        for index, candidates in enumerate(candidate_sets):
            section = sections.get(index)
            if section is None:
                self.warn(f"unified prune reply missing set {index + 1}; uniform fallback")
                results.append(_uniform(candidates, k))
                continue
            try:
                results.append(parse_scored_list(section, candidates, k))
            except PromptParseError:
                self.warn(f"unified prune reply unparseable for set {index + 1}; uniform fallback")
                results.append(_uniform(candidates, k))
        return results

    # -- Reasoner --

    def extract_topics(self, question: str) -> list[ScoredItem]:
        prompt = build_prompt(PromptKind.TOPIC_EXTRACT, question)
        reply = self.complete(prompt, self.config.reasoning_temperature)
        return parse_loose_scores(reply)

    def judge_sufficiency(
        self, question: str, rendered: str, chains: bool = False, depth: int | None = None
    ) -> bool:
        if chains:
            prompt = build_prompt(PromptKind.TOGR_REASON, question, {"chains": rendered})
        else:
            prompt = build_prompt(PromptKind.SUFFICIENCY, question, {"paths": rendered})
        reply = self.complete(prompt, self.config.reasoning_temperature)
        return parse_verdict(reply)

    def generate_answer(
        self, question: str, rendered: str, with_paths: bool, chains: bool = False
    ) -> str:
        if not with_paths:
            prompt = build_prompt(PromptKind.COT_BASELINE, question)
        else:
            prompt = build_prompt(PromptKind.ANSWER_GEN, question, {"paths": rendered})
        return self.complete(prompt, self.config.reasoning_temperature)


def _split_unified_reply(reply: str, n_sets: int) -> dict[int, str]:
    """Partition a unified-prune reply into per-set sections (0-indexed)."""
    sections: dict[int, str] = {}
    marker = re.compile(r"set\s*(\d+)\s*[:.\-]", re.IGNORECASE)
    matches = list(marker.finditer(reply))
    for pos, match in enumerate(matches):
        index = int(match.group(1)) - 1
        if 0 <= index < n_sets:
            end = matches[pos + 1].start() if pos + 1 < len(matches) else len(reply)
            sections[index] = reply[match.end():end]
    return sections


__all__ = [
    "ConfigurationError",
    "LLMConfig",
    "LLMUnavailableError",
    "LexicalScorer",
    "EmbeddingScorer",
    "PruneContext",
    "PruneKind",
    "PruneScorer",
    "Reasoner",
    "RemoteLLMBackend",
    "ScriptedBackend",
    "ScoredItem",
    "context_digest",
    "load_vector_table",
    "parse_answer",
]
