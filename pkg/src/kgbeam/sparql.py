"""Freebase-style SPARQL endpoint backend.

Exposes the same query surface as the in-memory graph store
(`relations_of`, `neighbors`, `resolve_entity`, `label_of`) on top of five
fixed query templates. The template texts are frozen byte for byte —
including their idiosyncratic whitespace and the `owlsameAs` IRI in the
label query — because downstream caches and recorded fixtures key on the
exact query string; only the id/relation slots are substituted.

Transport is injectable (any callable running a query string against an
endpoint and returning a SPARQL JSON result document), which keeps the
client testable against stubs and lets callers swap in their own HTTP
stack. Results are LRU-cached per (template, id, relation), retried with
exponential backoff, and capped at a configurable size with the truncation
surfaced through `drain_warnings`.
"""

from __future__ import annotations

import re
import string
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import requests

from .kg import Direction, EntityRef, RelationRef, UNNAMED_FORMAT

NS_PREFIX = "http://rdf.freebase.com/ns/"

DEFAULT_TIMEOUT_MS = 30_000
DEFAULT_RETRY_LIMIT = 3
DEFAULT_CACHE_CAPACITY = 10_000
DEFAULT_RESULT_CAP = 200
BACKOFF_BASE_S = 0.5

_IDENTIFIER = re.compile(r"^[A-Za-z0-9_.\-]+$")


class EndpointUnavailableError(RuntimeError):
    """The endpoint kept failing past the retry limit."""


class ProtocolError(RuntimeError):
    """The endpoint answered with something other than SPARQL JSON results."""


class ResolveMode(str, Enum):
    LABEL_TO_ID = "label-to-id"
    ID_TO_LABEL = "id-to-label"


class QueryTemplate(str, Enum):
    RELATION_OUTWARD = "relation-outward"
    RELATION_INWARD = "relation-inward"
    ENTITY_OUTWARD = "entity-outward"
    ENTITY_INWARD = "entity-inward"
    MID_TO_LABEL = "mid-to-label"


_RELATION_OUTWARD = (
    "PREFIX ns: <http://rdf.freebase.com/ns/>\n"
    "SELECT ?relation\n"
    "WHERE {\n"
    "    ns:$mid ?relation ?x . \n"
    "}"
)

_RELATION_INWARD = (
    "PREFIX ns: <http://rdf.freebase.com/ns/>\n"
    "SELECT ?relation\n"
    "WHERE {\n"
    "    ?x ?relation ns:$mid .\n"
    "}"
)

_ENTITY_OUTWARD = (
    "PREFIX ns: <http://rdf.freebase.com/ns/>\n"
    "SELECT ?tailEntity\n"
    "WHERE {\n"
    "    ns:$mid ns:$relation ?tailEntity . \n"
    "}\n"
)

_ENTITY_INWARD = (
    "PREFIX ns: <http://rdf.freebase.com/ns/>\n"
    "SELECT ?tailEntity\n"
    "WHERE {\n"
    "    ?tailEntity ns:$mid ns:$relation  . \n"
    "}"
)

_MID_TO_LABEL = (
    "PREFIX ns: <http://rdf.freebase.com/ns/>\n"
    "SELECT DISTINCT ?tailEntity\n"
    "WHERE {\n"
    "{\n"
    "    ?entity ns:type.object.name ?tailEntity .\n"
    "    FILTER(?entity = ns:$mid)\n"
    "}\n"
    "UNION\n"
    "{\n"
    "    ?entity <http://www.w3.org/2002/07/owlsameAs> ?tailEntity .\n"
    "    FILTER(?entity = ns:$mid)\n"
    "}\n"
    "}"
)

_TEMPLATE_TEXT: dict[QueryTemplate, str] = {
    QueryTemplate.RELATION_OUTWARD: _RELATION_OUTWARD,
    QueryTemplate.RELATION_INWARD: _RELATION_INWARD,
    QueryTemplate.ENTITY_OUTWARD: _ENTITY_OUTWARD,
    QueryTemplate.ENTITY_INWARD: _ENTITY_INWARD,
    QueryTemplate.MID_TO_LABEL: _MID_TO_LABEL,
}

_NEEDS_RELATION = {QueryTemplate.ENTITY_OUTWARD, QueryTemplate.ENTITY_INWARD}

_RESULT_VAR: dict[QueryTemplate, str] = {
    QueryTemplate.RELATION_OUTWARD: "relation",
    QueryTemplate.RELATION_INWARD: "relation",
    QueryTemplate.ENTITY_OUTWARD: "tailEntity",
    QueryTemplate.ENTITY_INWARD: "tailEntity",
    QueryTemplate.MID_TO_LABEL: "tailEntity",
}


def render_query(template: QueryTemplate, id: str, relation: str | None = None) -> str:
    """Substitute the id (and relation, for entity queries) into a template.

    Pure: the output is the frozen template text with only the slots
    replaced. The relation argument is required for entity templates and
    rejected for the others.
    """
    if not id or not _IDENTIFIER.match(id):
        raise ValueError(f"invalid identifier: {id!r}")
    needs_relation = template in _NEEDS_RELATION
    if needs_relation and relation is None:
        raise ValueError(f"{template.value} requires a relation")
    if not needs_relation and relation is not None:
        raise ValueError(f"{template.value} does not take a relation")
    if relation is not None and not _IDENTIFIER.match(relation):
        raise ValueError(f"invalid relation: {relation!r}")
    text = string.Template(_TEMPLATE_TEXT[template])
    if needs_relation:
        return text.substitute(mid=id, relation=relation)
    return text.substitute(mid=id)


@dataclass(frozen=True)
class EndpointConfig:
    endpoint: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    retry_limit: int = DEFAULT_RETRY_LIMIT
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    result_cap: int = DEFAULT_RESULT_CAP
    max_in_flight: int = 8
    backoff_s: float = BACKOFF_BASE_S

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise ValueError("endpoint is required")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.cache_capacity < 0:
            raise ValueError("cache_capacity must be >= 0")
        if self.result_cap < 1:
            raise ValueError("result_cap must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


Transport = Callable[[str, str, float], dict]
"""(endpoint, query text, timeout seconds) -> SPARQL JSON result document."""


def _requests_transport(endpoint: str, query: str, timeout_s: float) -> dict:
    response = requests.get(
        endpoint,
        params={"query": query, "format": "json"},
        headers={"Accept": "application/sparql-results+json"},
        timeout=timeout_s,
    )
    response.raise_for_status()
    return response.json()


def _strip_ns(value: str) -> str:
    if value.startswith(NS_PREFIX):
        return value[len(NS_PREFIX):]
    return value


class SparqlClient:
    """Caching, retrying client for the five fixed queries."""

    def __init__(
        self,
        config: EndpointConfig,
        transport: Transport | None = None,
        label_map: dict[str, str] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self._transport = transport or _requests_transport
        self._label_map = dict(label_map or {})
        self._sleep = sleep
        self._cache: OrderedDict[tuple, list[str]] = OrderedDict()
        self._cache_lock = threading.Lock()
        self._in_flight = threading.Semaphore(config.max_in_flight)
        self._warnings: list[str] = []
        self._warn_lock = threading.Lock()
        self.query_count = 0
        self.cache_hits = 0

    # -- warnings channel (drained by the engine into the trace) --

    def _warn(self, message: str) -> None:
        with self._warn_lock:
            self._warnings.append(message)

    def drain_warnings(self) -> list[str]:
        with self._warn_lock:
            out = self._warnings
            self._warnings = []
            return out

    # -- fetch --

    def _cache_get(self, key: tuple) -> list[str] | None:
        if self.config.cache_capacity == 0:
            return None
        with self._cache_lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                self.cache_hits += 1
                return list(self._cache[key])
        return None

    def _cache_put(self, key: tuple, values: list[str]) -> None:
        if self.config.cache_capacity == 0:
            return
        with self._cache_lock:
            self._cache[key] = list(values)
            self._cache.move_to_end(key)
            while len(self._cache) > self.config.cache_capacity:
                self._cache.popitem(last=False)

    def _execute(self, query: str) -> dict:
        attempts = self.config.retry_limit + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                with self._in_flight:
                    self.query_count += 1
                    return self._transport(
                        self.config.endpoint, query, self.config.timeout_ms / 1000.0
                    )
            except Exception as exc:  # transport-level failure: retry
                last_error = exc
                if attempt + 1 < attempts:
                    self._sleep(self.config.backoff_s * (2 ** attempt))
        raise EndpointUnavailableError(
            f"endpoint failed after {attempts} attempts: {last_error}"
        ) from last_error

    def fetch(
        self, template: QueryTemplate, id: str, relation: str | None = None
    ) -> list[str]:
        """Run (or serve from cache) one templated query; values in response order."""
        key = (template.value, id, relation)
        cached = self._cache_get(key)
        if cached is not None:
            return cached

        query = render_query(template, id, relation)
        document = self._execute(query)
        var = _RESULT_VAR[template]
        try:
            bindings = document["results"]["bindings"]
            values = [_strip_ns(b[var]["value"]) for b in bindings]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed results document: {exc!r}") from exc

        if len(values) > self.config.result_cap:
            self._warn(
                f"{template.value} results for {id} truncated to {self.config.result_cap}"
            )
            values = values[: self.config.result_cap]
        self._cache_put(key, values)
        return values

    # -- resolution --

    def resolve(self, name_or_id: str, mode: ResolveMode) -> str | None:
        """Map label -> id via the seeded label map, or id -> label via query.

        LabelToId answers None when unknown; IdToLabel falls back to the
        placeholder display used for unlabeled entities.
        """
        if not name_or_id:
            raise ValueError("name_or_id must be non-empty")
        if mode is ResolveMode.LABEL_TO_ID:
            return self._label_map.get(name_or_id)
        labels = self.fetch(QueryTemplate.MID_TO_LABEL, name_or_id)
        if labels:
            return labels[0]
        return UNNAMED_FORMAT.format(id=name_or_id)


class SparqlKnowledgeGraph:
    """Adapter giving a SparqlClient the in-memory store's query surface."""

    def __init__(self, client: SparqlClient) -> None:
        self.client = client

    def drain_warnings(self) -> list[str]:
        return self.client.drain_warnings()

    def _labeled(self, entity_id: str) -> EntityRef:
        label = self.client.resolve(entity_id, ResolveMode.ID_TO_LABEL)
        if label == UNNAMED_FORMAT.format(id=entity_id):
            return EntityRef(entity_id, None)
        return EntityRef(entity_id, label)

    def relations_of(self, entity: EntityRef) -> list[tuple[RelationRef, Direction]]:
        pairs: list[tuple[RelationRef, Direction]] = []
        for name in self.client.fetch(QueryTemplate.RELATION_OUTWARD, entity.id):
            pairs.append((RelationRef(name), Direction.OUTWARD))
        for name in self.client.fetch(QueryTemplate.RELATION_INWARD, entity.id):
            pairs.append((RelationRef(name), Direction.INWARD))
        pairs.sort(key=lambda pair: (pair[0].name, pair[1].value))
        return pairs

    def neighbors(
        self, entity: EntityRef, relation: RelationRef, direction: Direction
    ) -> list[EntityRef]:
        template = (
            QueryTemplate.ENTITY_OUTWARD
            if direction is Direction.OUTWARD
            else QueryTemplate.ENTITY_INWARD
        )
        ids = self.client.fetch(template, entity.id, relation.name)
        return sorted((self._labeled(i) for i in ids), key=lambda e: e.id)

    def label_of(self, entity_id: str) -> str:
        label = self.client.resolve(entity_id, ResolveMode.ID_TO_LABEL)
        return label if label is not None else UNNAMED_FORMAT.format(id=entity_id)

    def resolve_entity(self, name_or_id: str) -> EntityRef | None:
        if not name_or_id or not name_or_id.strip():
            return None
        mapped = self.client.resolve(name_or_id, ResolveMode.LABEL_TO_ID)
        if mapped is not None:
            return EntityRef(mapped, name_or_id)
        if _IDENTIFIER.match(name_or_id):
            return self._labeled(name_or_id)
        return None

    def stats(self) -> dict:
        return {
            "backend": "sparql",
            "endpoint": self.client.config.endpoint,
            "queries": self.client.query_count,
            "cache_hits": self.client.cache_hits,
        }


def make_results_document(var: str, values: Sequence[str]) -> dict:
    """Build a standard SPARQL JSON results body (handy for stub transports)."""
    return {
        "head": {"vars": [var]},
        "results": {
            "bindings": [{var: {"type": "uri", "value": v}} for v in values]
        },
    }


__all__ = [
    "EndpointConfig",
    "EndpointUnavailableError",
    "ProtocolError",
    "QueryTemplate",
    "ResolveMode",
    "SparqlClient",
    "SparqlKnowledgeGraph",
    "Transport",
    "make_results_document",
    "render_query",
    "NS_PREFIX",
]
