"""HTTP facade: ask questions, fetch persisted traces, correct the graph.

Endpoints:

  POST /ask                 run the search for a question, persist the run
  GET  /runs/{id}           run summary (no trace body)
  GET  /runs/{id}/trace     the full trace document
  POST /runs/{id}/correct   fix a triple, re-ask the run's question
  GET  /kg/stats            graph counters

Runs are persisted one JSON file per run under the store directory and are
immutable once written. A correction re-runs the original question under
the original config; the new run records the old one as its parent, so
repeated corrections form an append-only provenance chain. Corrections are
only possible against the in-memory graph — remote SPARQL backends are
read-only and answer 409.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .engine import Engine, EngineError, SearchConfig, search_config_from_dict
from .kg import CorrectionError, KnowledgeGraph, Triple, EntityRef, RelationRef
from .scoring import PruneScorer, Reasoner


class RunStore:
    """File-per-run JSON persistence; records are immutable once written."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, run_id: str) -> Path:
        return self.directory / f"{run_id}.json"

    def new_id(self) -> str:
        with self._lock:
            while True:
                run_id = uuid.uuid4().hex[:12]
                if not self._path(run_id).exists():
                    return run_id

    def save(self, record: dict) -> None:
        path = self._path(record["run_id"])
        if path.exists():
            raise FileExistsError(f"run {record['run_id']} already persisted")
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False, indent=2), encoding="utf-8")
        tmp.replace(path)

    def load(self, run_id: str) -> dict | None:
        path = self._path(run_id)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))


@dataclass
class ServiceState:
    """Everything a running service needs, wired once at startup."""

    kg: object
    scorer: PruneScorer
    reasoner: Reasoner
    config: SearchConfig
    store: RunStore
    correction_lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def supports_corrections(self) -> bool:
        return isinstance(self.kg, KnowledgeGraph)


class AskRequest(BaseModel):
    question: str = Field(min_length=1)
    width: int | None = None
    max_depth: int | None = None
    variant: str | None = None
    rendering: str | None = None
    prune_mode: str | None = None
    entity_prune: str | None = None
    seed: int | None = None


class CorrectionRequest(BaseModel):
    action: Literal["replace_object", "delete"]
    subject: str
    relation: str
    object: str
    new_object: str | None = None
    new_object_label: str | None = None
    note: str = ""


def _merge_config(base: SearchConfig, request: AskRequest) -> SearchConfig:
    doc = base.to_dict()
    overrides = request.model_dump(exclude_none=True)
    overrides.pop("question", None)
    doc.update(overrides)
    if request.entity_prune is None and (
        request.variant is not None and request.variant != base.variant.value
    ):
        # let the variant pick its own default pruning style
        doc.pop("entity_prune", None)
    return search_config_from_dict(doc)


def _execute_run(
    state: ServiceState, question: str, config: SearchConfig, parent_run_id: str | None
) -> dict:
    engine = Engine(state.kg, state.scorer, state.reasoner, config)
    run_id = state.store.new_id()
    try:
        outcome, trace = engine.run(question)
    except EngineError as exc:
        partial = {
            "run_id": run_id,
            "question": question,
            "config": config.to_dict(),
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "parent_run_id": parent_run_id,
            "error": str(exc),
            "outcome": None,
            "trace": {"run_id": run_id, **(exc.trace.to_dict() if exc.trace else {})},
        }
        state.store.save(partial)
        raise HTTPException(
            status_code=502,
            detail={"error": str(exc), "partial_trace_id": run_id},
        ) from exc
    record = {
        "run_id": run_id,
        "question": question,
        "config": config.to_dict(),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "parent_run_id": parent_run_id,
        "error": None,
        "outcome": {**outcome.as_dict(), "ledger": outcome.ledger.as_dict()},
        "trace": {"run_id": run_id, **trace.to_dict()},
    }
    state.store.save(record)
    return record


def _summary(record: dict) -> dict:
    return {key: value for key, value in record.items() if key != "trace"}


def build_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="kgbeam", version="0.1.0")
    app.state.service = state

    @app.post("/ask")
    def ask(request: AskRequest) -> dict:
        try:
            config = _merge_config(state.config, request)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        record = _execute_run(state, request.question, config, None)
        outcome = record["outcome"]
        return {
            "run_id": record["run_id"],
            "answer": outcome["answer"],
            "fallback": outcome["fallback"],
            "depth_reached": outcome["depth_reached"],
            "ledger": outcome["ledger"],
        }

    @app.get("/runs/{run_id}")
    def get_run(run_id: str) -> dict:
        record = state.store.load(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"run {run_id} not found")
        return _summary(record)

    @app.get("/runs/{run_id}/trace")
    def get_trace(run_id: str) -> dict:
        record = state.store.load(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"run {run_id} not found")
        return record["trace"]

    @app.post("/runs/{run_id}/correct")
    def correct(run_id: str, request: CorrectionRequest) -> dict:
        record = state.store.load(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"run {run_id} not found")
        if not state.supports_corrections:
            raise HTTPException(
                status_code=409,
                detail="corrections are not supported on a read-only SPARQL backend",
            )
        target = Triple(
            EntityRef(request.subject),
            RelationRef(request.relation),
            EntityRef(request.object),
        )
        with state.correction_lock:
            try:
                correction = state.kg.apply_correction(
                    request.action,
                    target,
                    new_object=EntityRef(request.new_object, request.new_object_label)
                    if request.new_object
                    else None,
                    note=request.note,
                )
            except CorrectionError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            config = search_config_from_dict(record["config"])
            new_record = _execute_run(state, record["question"], config, run_id)
        answer_before = (record.get("outcome") or {}).get("answer")
        return {
            "run_id": new_record["run_id"],
            "parent_run_id": run_id,
            "answer_before": answer_before,
            "answer_after": new_record["outcome"]["answer"],
            "correction": {
                "sequence": correction.sequence,
                "action": correction.action,
                "subject": request.subject,
                "relation": request.relation,
                "object": request.object,
                "new_object": request.new_object,
                "note": request.note,
            },
        }

    @app.get("/kg/stats")
    def kg_stats() -> dict:
        return state.kg.stats()

    return app


def provenance_chain(store: RunStore, run_id: str) -> list[str]:
    """Run ids from the given run back to its root, oldest last."""
    chain: list[str] = []
    seen: set[str] = set()
    current: str | None = run_id
    while current is not None and current not in seen:
        seen.add(current)
        chain.append(current)
        record = store.load(current)
        if record is None:
            break
        current = record.get("parent_run_id")
    return chain


__all__ = [
    "AskRequest",
    "CorrectionRequest",
    "RunStore",
    "ServiceState",
    "build_app",
    "provenance_chain",
]
