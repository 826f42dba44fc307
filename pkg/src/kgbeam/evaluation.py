"""Batch evaluation: dataset loading and answer/exploration metrics.

Metrics reported per batch:

  hits@1        exact-match accuracy of the single returned answer
  average calls mean backend-call budget per question (from the ledgers)
  overlap       how much of each record's gold relation set the search
                actually explored, bucketed into a histogram
  per-depth     accuracy grouped by the gold query's relation count

Datasets are line-delimited JSON records: {"id", "question", "answers",
"sparql"?} — converting public benchmarks into this shape is up to the
caller.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .engine import Engine

# Namespace-prefixed predicate tokens: at least two dots separates real
# relation names (domain.type.property) from entity mids (m.0xyz).
_RELATION_TOKEN = re.compile(r"ns:([A-Za-z0-9_\-]+(?:\.[A-Za-z0-9_\-]+){2,})")

_WS = re.compile(r"\s+")

OVERLAP_BUCKETS = ("0", "(0,25]", "(25,50]", "(50,75]", "(75,100)", "100")


class DatasetError(ValueError):
    """A dataset line is missing required fields or is not valid JSON."""


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given inputs (e.g. empty gold set)."""


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    answers: tuple[str, ...]
    sparql: str | None = None

    def __post_init__(self) -> None:
        if not self.question or not self.question.strip():
            raise DatasetError(f"record {self.id}: question is empty")
        if not self.answers:
            raise DatasetError(f"record {self.id}: needs at least one gold answer")


def load_dataset(source: str | Path | Iterable[str]) -> list[DatasetRecord]:
    """Read JSONL records; ids default to the line index and must be unique."""
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = list(source)
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
        answers = doc.get("answers")
        if answers is None and "answer" in doc:
            answers = [doc["answer"]]
        if not isinstance(answers, list):
            raise DatasetError(f"line {line_no}: 'answers' must be a list")
        record = DatasetRecord(
            id=str(doc.get("id", line_no - 1)),
            question=doc.get("question", ""),
            answers=tuple(str(a) for a in answers),
            sparql=doc.get("sparql"),
        )
        if record.id in seen:
            raise DatasetError(f"line {line_no}: duplicate record id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return records


# ===== Metrics =====


def normalize_answer(text: str) -> str:
    """Case-fold, trim, collapse internal whitespace, strip one final period."""
    out = _WS.sub(" ", text.casefold().strip())
    if out.endswith("."):
        out = out[:-1]
    return out


def exact_match(prediction: str, golds: Sequence[str]) -> int:
    if not golds:
        raise UndefinedMetricError("exact_match needs at least one gold answer")
    normalized = normalize_answer(prediction)
    return int(any(normalized == normalize_answer(g) for g in golds))


def overlap_ratio(explored: Iterable[str], gold: Iterable[str]) -> float:
    """|explored ∩ gold| / |gold| over deduplicated relation names."""
    gold_set = set(gold)
    if not gold_set:
        raise UndefinedMetricError("overlap_ratio needs a non-empty gold set")
    return len(set(explored) & gold_set) / len(gold_set)


def overlap_bucket(ratio: float) -> str:
    if ratio <= 0.0:
        return "0"
    if ratio >= 1.0:
        return "100"
    if ratio <= 0.25:
        return "(0,25]"
    if ratio <= 0.5:
        return "(25,50]"
    if ratio <= 0.75:
        return "(50,75]"
    return "(75,100)"


def gold_relations(query: str) -> set[str]:
    """Deduplicated namespace-prefixed relation names in a formal query."""
    return set(_RELATION_TOKEN.findall(query or ""))


def reasoning_depth(query: str) -> int:
    """Number of distinct relations in a gold query (0 when none match)."""
    return len(gold_relations(query))


def explored_relations(trace_doc: dict) -> set[str]:
    """Relations appearing in any selected beam snapshot of a trace."""
    names: set[str] = set()
    for event in trace_doc.get("depths", []):
        for state in event.get("beam", []):
            for hop in state.get("hops", []):
                names.add(hop["relation"])
            for rel in state.get("relations", []):
                names.add(rel["relation"])
    return names


# ===== Batch driver =====


@dataclass
class MetricsReport:
    count: int
    hits_at_1: float
    average_calls: float
    average_depth: float
    fallback_rate: float
    error_count: int
    overlap_histogram: dict[str, int]
    per_depth: dict[str, dict[str, float]]
    per_record: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "hits_at_1": self.hits_at_1,
            "average_calls": self.average_calls,
            "average_depth": self.average_depth,
            "fallback_rate": self.fallback_rate,
            "error_count": self.error_count,
            "overlap_histogram": self.overlap_histogram,
            "per_depth": self.per_depth,
            "per_record": self.per_record,
        }

    def to_text(self) -> str:
        lines = [
            f"records          {self.count}",
            f"hits@1           {self.hits_at_1:.4f}",
            f"average calls    {self.average_calls:.2f}",
            f"average depth    {self.average_depth:.2f}",
            f"fallback rate    {self.fallback_rate:.4f}",
            f"errors           {self.error_count}",
            "overlap histogram",
        ]
        for bucket in OVERLAP_BUCKETS:
            lines.append(f"  {bucket:<9} {self.overlap_histogram.get(bucket, 0)}")
        if self.per_depth:
            lines.append("accuracy by gold depth")
            for depth in sorted(self.per_depth, key=int):
                row = self.per_depth[depth]
                lines.append(
                    f"  depth {depth}: {row['hits']:.0f}/{row['count']:.0f}"
                    f" = {row['accuracy']:.4f}"
                )
        return "\n".join(lines)


def evaluate_record(engine: Engine, record: DatasetRecord) -> dict:
    """Run one record; engine failures become misses with an error note."""
    entry: dict = {
        "id": record.id,
        "question": record.question,
        "prediction": None,
        "hit": 0,
        "calls": 0,
        "fallback": None,
        "depth_reached": None,
        "overlap": None,
        "gold_depth": reasoning_depth(record.sparql) if record.sparql else None,
        "error": None,
    }
    try:
        outcome, trace = engine.run(record.question)
    except Exception as exc:
        entry["error"] = str(exc)
        return entry
    entry["prediction"] = outcome.answer
    entry["hit"] = exact_match(outcome.answer, record.answers)
    entry["calls"] = outcome.ledger.total
    entry["fallback"] = outcome.fallback
    entry["depth_reached"] = outcome.depth_reached
    gold = gold_relations(record.sparql) if record.sparql else set()
    if gold:
        entry["overlap"] = overlap_ratio(explored_relations(trace.to_dict()), gold)
    return entry


def run_eval(
    engine: Engine, records: Sequence[DatasetRecord], workers: int = 1
) -> MetricsReport:
    """Evaluate every record and aggregate; per-record failures never abort."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1:
        entries = [evaluate_record(engine, r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda r: evaluate_record(engine, r), records))

    count = len(entries)
    evaluated = [e for e in entries if e["error"] is None]
    histogram = {bucket: 0 for bucket in OVERLAP_BUCKETS}
    for entry in evaluated:
        if entry["overlap"] is not None:
            histogram[overlap_bucket(entry["overlap"])] += 1

    per_depth: dict[str, dict[str, float]] = {}
    for entry in evaluated:
        if entry["gold_depth"] is None:
            continue
        row = per_depth.setdefault(
            str(entry["gold_depth"]), {"count": 0.0, "hits": 0.0, "accuracy": 0.0}
        )
        row["count"] += 1
        row["hits"] += entry["hit"]
    for row in per_depth.values():
        row["accuracy"] = row["hits"] / row["count"] if row["count"] else 0.0

    depths = [e["depth_reached"] for e in evaluated if e["depth_reached"] is not None]
    return MetricsReport(
        count=count,
        hits_at_1=sum(e["hit"] for e in entries) / count if count else 0.0,
        average_calls=(
            sum(e["calls"] for e in evaluated) / len(evaluated) if evaluated else 0.0
        ),
        average_depth=sum(depths) / len(depths) if depths else 0.0,
        fallback_rate=(
            sum(1 for e in evaluated if e["fallback"]) / len(evaluated)
            if evaluated
            else 0.0
        ),
        error_count=count - len(evaluated),
        overlap_histogram=histogram,
        per_depth=per_depth,
        per_record=entries,
    )


__all__ = [
    "DatasetError",
    "DatasetRecord",
    "MetricsReport",
    "OVERLAP_BUCKETS",
    "UndefinedMetricError",
    "evaluate_record",
    "exact_match",
    "explored_relations",
    "gold_relations",
    "load_dataset",
    "normalize_answer",
    "overlap_bucket",
    "overlap_ratio",
    "reasoning_depth",
    "run_eval",
]
