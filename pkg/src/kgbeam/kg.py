"""In-memory knowledge graph store with corrections.

Triples are directed (subject, relation, object) edges between entities.
The store keeps forward and reverse adjacency indexes so traversal can
fan out along both edge directions, plus a label table for display names.

Graph files are tab-separated, one triple per line:

    subject-id <TAB> relation <TAB> object-id [<TAB> subject-label [<TAB> object-label]]

Blank lines and lines starting with '#' are ignored.

Corrections (object replacement / triple deletion) are append-only and
logged with monotone sequence numbers; replaying the log over the initial
snapshot reproduces the current store.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

UNNAMED_FORMAT = "UnName_Entity({id})"

ACTION_REPLACE_OBJECT = "replace_object"
ACTION_DELETE = "delete"
_ACTIONS = (ACTION_REPLACE_OBJECT, ACTION_DELETE)


class GraphParseError(ValueError):
    """Raised when a graph file line cannot be parsed."""

    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CorrectionError(ValueError):
    """Raised when a correction cannot be applied (e.g. missing target)."""


class Direction(str, Enum):
    """Edge orientation relative to the entity being expanded."""

    OUTWARD = "out"
    INWARD = "in"


@dataclass(frozen=True)
class EntityRef:
    """Reference to an entity. Identity (equality, hashing) is by id only."""

    id: str
    label: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("entity id must be non-empty")

    @property
    def display(self) -> str:
        """Human-readable name: the label, or a placeholder built from the id."""
        return self.label if self.label else UNNAMED_FORMAT.format(id=self.id)


@dataclass(frozen=True)
class RelationRef:
    """Reference to a relation (predicate) by name."""

    name: str

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("relation name must be non-empty")


@dataclass(frozen=True)
class Triple:
    """A directed edge: (subject) --relation--> (object)."""

    subject: EntityRef
    relation: RelationRef
    object: EntityRef

    def key(self) -> tuple[str, str, str]:
        return (self.subject.id, self.relation.name, self.object.id)


@dataclass(frozen=True)
class Correction:
    """One applied edit. `new_object` is set only for replace_object."""

    sequence: int
    action: str
    target: Triple
    new_object: EntityRef | None = None
    note: str = ""

    def __post_init__(self) -> None:
        if self.action not in _ACTIONS:
            raise ValueError(f"unknown correction action: {self.action!r}")
        if self.action == ACTION_REPLACE_OBJECT and self.new_object is None:
            raise ValueError("replace_object requires new_object")


class KnowledgeGraph:
    """Mutable triple store with adjacency indexes and an append-only correction log.

    Reads are lock-free; corrections are serialized through a single writer lock.
    """

    def __init__(self, triples: Iterable[Triple] = ()) -> None:
        self._out: dict[str, dict[str, set[str]]] = {}  # subject -> relation -> objects
        self._in: dict[str, dict[str, set[str]]] = {}  # object -> relation -> subjects
        self._keys: set[tuple[str, str, str]] = set()
        self._labels: dict[str, str] = {}
        self._corrections: list[Correction] = []
        self._write_lock = threading.Lock()
        for triple in triples:
            self.add(triple)
        self._initial_keys = set(self._keys)

    # ----- loading -----

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "KnowledgeGraph":
        kg = cls()
        for line_no, raw in enumerate(lines, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 3 or len(fields) > 5:
                raise GraphParseError(
                    line_no, f"expected 3-5 tab-separated fields, got {len(fields)}"
                )
            subject_id, relation, object_id = (f.strip() for f in fields[:3])
            if not subject_id or not relation or not object_id:
                raise GraphParseError(line_no, "empty subject, relation or object")
            subject_label = fields[3].strip() if len(fields) > 3 else ""
            object_label = fields[4].strip() if len(fields) > 4 else ""
            kg.add(
                Triple(
                    EntityRef(subject_id, subject_label or None),
                    RelationRef(relation),
                    EntityRef(object_id, object_label or None),
                )
            )
        kg._initial_keys = set(kg._keys)
        return kg

    def add(self, triple: Triple) -> bool:
        """Insert a triple. Returns False (no-op) if it is already present."""
        key = triple.key()
        if key in self._keys:
            self._register_labels(triple)
            return False
        self._keys.add(key)
        self._out.setdefault(key[0], {}).setdefault(key[1], set()).add(key[2])
        self._in.setdefault(key[2], {}).setdefault(key[1], set()).add(key[0])
        self._register_labels(triple)
        return True

    def _register_labels(self, triple: Triple) -> None:
        for ref in (triple.subject, triple.object):
            if ref.label:
                self._labels[ref.id] = ref.label

    def _remove_key(self, key: tuple[str, str, str]) -> None:
        self._keys.discard(key)
        subject_id, relation, object_id = key
        rel_map = self._out.get(subject_id)
        if rel_map and relation in rel_map:
            rel_map[relation].discard(object_id)
            if not rel_map[relation]:
                del rel_map[relation]
            if not rel_map:
                del self._out[subject_id]
        rel_map = self._in.get(object_id)
        if rel_map and relation in rel_map:
            rel_map[relation].discard(subject_id)
            if not rel_map[relation]:
                del rel_map[relation]
            if not rel_map:
                del self._in[object_id]

    # ----- queries -----

    @staticmethod
    def _entity_id(entity: EntityRef | str) -> str:
        return entity.id if isinstance(entity, EntityRef) else entity

    def has_triple(self, triple: Triple) -> bool:
        return triple.key() in self._keys

    def has_entity(self, entity: EntityRef | str) -> bool:
        eid = self._entity_id(entity)
        return eid in self._out or eid in self._in

    def triples(self) -> Iterator[Triple]:
        for subject_id, relation, object_id in sorted(self._keys):
            yield Triple(
                self.entity(subject_id), RelationRef(relation), self.entity(object_id)
            )

    def entity(self, entity_id: str) -> EntityRef:
        """EntityRef for an id, carrying the known label if any."""
        return EntityRef(entity_id, self._labels.get(entity_id))

    def entity_ids(self) -> list[str]:
        return sorted(set(self._out) | set(self._in))

    def relations_of(self, entity: EntityRef | str) -> list[tuple[RelationRef, Direction]]:
        """All relations incident to the entity, with their orientation.

        Unknown entities yield an empty list. Ordering is deterministic:
        by relation name, then direction value.
        """
        eid = self._entity_id(entity)
        found: set[tuple[str, Direction]] = set()
        for name in self._out.get(eid, ()):
            found.add((name, Direction.OUTWARD))
        for name in self._in.get(eid, ()):
            found.add((name, Direction.INWARD))
        return [
            (RelationRef(name), direction)
            for name, direction in sorted(found, key=lambda t: (t[0], t[1].value))
        ]

    def neighbors(
        self, entity: EntityRef | str, relation: RelationRef | str, direction: Direction
    ) -> list[EntityRef]:
        """Entities reachable from `entity` over `relation` in `direction`, sorted by id."""
        eid = self._entity_id(entity)
        name = relation.name if isinstance(relation, RelationRef) else relation
        index = self._out if direction is Direction.OUTWARD else self._in
        ids = index.get(eid, {}).get(name, set())
        return [self.entity(i) for i in sorted(ids)]

    def label_of(self, entity: EntityRef | str) -> str:
        eid = self._entity_id(entity)
        return self._labels.get(eid) or UNNAMED_FORMAT.format(id=eid)

    def labels(self) -> dict[str, str]:
        """Copy of the id -> label table."""
        return dict(self._labels)

    def find_by_label(self, label: str) -> EntityRef | None:
        """Entity whose label matches exactly, else case-insensitively; smallest id wins."""
        exact = sorted(eid for eid, lab in self._labels.items() if lab == label)
        if exact:
            return self.entity(exact[0])
        wanted = label.casefold()
        loose = sorted(eid for eid, lab in self._labels.items() if lab.casefold() == wanted)
        return self.entity(loose[0]) if loose else None

    def resolve_entity(self, name_or_id: str) -> EntityRef | None:
        """Resolve a topic mention: exact id first, then label lookup."""
        if self.has_entity(name_or_id):
            return self.entity(name_or_id)
        return self.find_by_label(name_or_id)

    # ----- statistics -----

    @property
    def triple_count(self) -> int:
        return len(self._keys)

    @property
    def entity_count(self) -> int:
        return len(self.entity_ids())

    @property
    def relation_count(self) -> int:
        return len({key[1] for key in self._keys})

    def stats(self) -> dict[str, int]:
        return {
            "entities": self.entity_count,
            "relations": self.relation_count,
            "triples": self.triple_count,
            "corrections": len(self._corrections),
        }

    # ----- corrections -----

    @property
    def corrections(self) -> tuple[Correction, ...]:
        return tuple(self._corrections)

    @property
    def initial_triple_keys(self) -> frozenset[tuple[str, str, str]]:
        return frozenset(self._initial_keys)

    def apply_correction(
        self,
        action: str,
        target: Triple,
        new_object: EntityRef | None = None,
        note: str = "",
    ) -> Correction:
        """Apply an edit to an existing triple and log it.

        Returns the recorded Correction (with its assigned sequence number).
        Raises CorrectionError if the target triple is not in the store.
        """
        with self._write_lock:
            if target.key() not in self._keys:
                raise CorrectionError(f"target triple not found: {target.key()}")
            correction = Correction(
                sequence=len(self._corrections) + 1,
                action=action,
                target=target,
                new_object=new_object,
                note=note,
            )
            self._remove_key(target.key())
            if correction.action == ACTION_REPLACE_OBJECT:
                assert correction.new_object is not None
                self.add(Triple(target.subject, target.relation, correction.new_object))
            self._corrections.append(correction)
            return correction

    def replay(self) -> "KnowledgeGraph":
        """Rebuild a graph from the initial snapshot plus the correction log."""
        fresh = KnowledgeGraph()
        for subject_id, relation, object_id in sorted(self._initial_keys):
            fresh.add(
                Triple(self.entity(subject_id), RelationRef(relation), self.entity(object_id))
            )
        fresh._initial_keys = set(fresh._keys)
        for correction in self._corrections:
            fresh.apply_correction(
                correction.action, correction.target, correction.new_object, correction.note
            )
        return fresh

    def adjacency_snapshot(self) -> frozenset[tuple[str, str, str]]:
        return frozenset(self._keys)

    def correction_log_lines(self) -> list[str]:
        """Correction log as tab-separated lines (sequence, action, s, r, o, new, note)."""
        lines = []
        for c in self._corrections:
            s, r, o = c.target.key()
            new = c.new_object.id if c.new_object else ""
            lines.append("\t".join([str(c.sequence), c.action, s, r, o, new, c.note]))
        return lines


def load_graph(source: str | Path | Iterable[str]) -> KnowledgeGraph:
    """Load a graph from a file path or an iterable of lines."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            return KnowledgeGraph.from_lines(handle)
    return KnowledgeGraph.from_lines(source)
