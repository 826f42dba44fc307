"""Command-line entry points: run, eval, serve, render-prompt.

The knowledge graph comes from --kg: a TSV file path loads the in-memory
store; an http(s) URL connects the SPARQL backend. The prune scorer comes
from --scorer; reasoning (topics, sufficiency, answers) uses the remote
LLM when --llm-endpoint is given, otherwise a canned backend that never
finds the evidence sufficient (useful for offline exploration smoke runs).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import engine as engine_mod
from .engine import Engine, SearchConfig, EntityPruneMode, PruneMode, Variant
from .evaluation import load_dataset, run_eval
from .kg import load_graph
from .prompts import PathRendering, PromptKind, build_prompt
from .scoring import (
    EmbeddingScorer,
    LexicalScorer,
    LLMConfig,
    RemoteLLMBackend,
    ScriptedBackend,
    load_vector_table,
)
from .service import RunStore, ServiceState, build_app
from .sparql import EndpointConfig, SparqlClient, SparqlKnowledgeGraph


def _add_search_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--width", type=int, default=3, help="beam width N")
    parser.add_argument("--depth", type=int, default=3, help="maximum search depth")
    parser.add_argument(
        "--variant", choices=[v.value for v in Variant], default=Variant.TOG.value
    )
    parser.add_argument(
        "--prompt-format",
        choices=[r.value for r in PathRendering],
        default=None,
        help="path rendering (default: triples; sequences for tog-r)",
    )
    parser.add_argument(
        "--prune-mode",
        choices=[m.value for m in PruneMode],
        default=PruneMode.PER_SET.value,
    )
    parser.add_argument(
        "--entity-prune",
        choices=[m.value for m in EntityPruneMode],
        default=None,
        help="entity selection style (default: scored; random for tog-r)",
    )
    parser.add_argument("--seed", type=int, default=0)


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kg", required=True, help="graph TSV path or SPARQL endpoint URL")
    parser.add_argument("--label-map", default=None, help="JSON file mapping labels to ids")
    parser.add_argument(
        "--scorer",
        choices=["scripted", "lexical", "embedding", "llm"],
        default="lexical",
    )
    parser.add_argument("--vectors", default=None, help="vector table for --scorer embedding")
    parser.add_argument("--llm-endpoint", default=None, help="chat-completions URL")
    parser.add_argument("--llm-model", default="gpt-3.5-turbo")


def _build_config(args: argparse.Namespace) -> SearchConfig:
    rendering = args.prompt_format
    if rendering is None:
        rendering = (
            PathRendering.SEQUENCES.value
            if args.variant == Variant.TOG_R.value
            else PathRendering.TRIPLES.value
        )
    return SearchConfig(
        width=args.width,
        max_depth=args.depth,
        variant=Variant(args.variant),
        rendering=PathRendering(rendering),
        prune_mode=PruneMode(args.prune_mode),
        entity_prune=EntityPruneMode(args.entity_prune) if args.entity_prune else None,
        seed=args.seed,
    )


def _build_kg(args: argparse.Namespace):
    if args.kg.startswith(("http://", "https://")):
        label_map = None
        if args.label_map:
            label_map = json.loads(Path(args.label_map).read_text(encoding="utf-8"))
        client = SparqlClient(EndpointConfig(endpoint=args.kg), label_map=label_map)
        return SparqlKnowledgeGraph(client)
    return load_graph(args.kg)


class _LabelTopicReasoner(ScriptedBackend):
    """Offline stand-in reasoner: topics are graph labels found in the question.

    Sufficiency and generation keep the canned defaults (never sufficient,
    "I don't know."), so offline runs explore the graph to full depth.
    """

    def __init__(self, labels) -> None:
        super().__init__()
        self._question_labels = sorted(set(labels), key=lambda l: (-len(l), l))

    def extract_topics(self, question: str):
        from .prompts import ScoredItem

        self._record("topic_extract", question)
        haystack = question.casefold()
        found = [l for l in self._question_labels if l and l.casefold() in haystack][:5]
        if not found:
            return []
        return [ScoredItem(name, 1.0 / len(found)) for name in found]


def _build_backends(args: argparse.Namespace, kg) -> tuple:
    llm = None
    if args.llm_endpoint:
        llm = RemoteLLMBackend(LLMConfig(endpoint=args.llm_endpoint, model=args.llm_model))
    if args.scorer == "scripted":
        scorer = ScriptedBackend()
    elif args.scorer == "lexical":
        scorer = LexicalScorer()
    elif args.scorer == "embedding":
        if not args.vectors:
            raise SystemExit("--scorer embedding requires --vectors")
        scorer = EmbeddingScorer(load_vector_table(args.vectors))
    else:
        if llm is None:
            raise SystemExit("--scorer llm requires --llm-endpoint")
        scorer = llm
    if llm is not None:
        return scorer, llm
    labels = kg.labels().values() if hasattr(kg, "labels") else []
    return scorer, _LabelTopicReasoner(labels)


def _cmd_run(args: argparse.Namespace) -> int:
    kg = _build_kg(args)
    scorer, reasoner = _build_backends(args, kg)
    config = _build_config(args)
    engine = Engine(kg, scorer, reasoner, config)
    outcome, trace = engine.run(args.question)
    print(f"answer: {outcome.answer}")
    if outcome.fallback:
        print("(answered from the model's own knowledge, not the graph)")
    print(f"depth reached: {outcome.depth_reached}  calls: {outcome.ledger.total}")
    for path in outcome.paths:
        print(f"  score {path['score']:.4f}")
    if args.out:
        doc = {
            "question": args.question,
            "config": config.to_dict(),
            "outcome": {**outcome.as_dict(), "ledger": outcome.ledger.as_dict()},
            "trace": trace.to_dict(),
        }
        Path(args.out).write_text(
            json.dumps(doc, ensure_ascii=False, indent=2), encoding="utf-8"
        )
        print(f"trace written to {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    kg = _build_kg(args)
    scorer, reasoner = _build_backends(args, kg)
    config = _build_config(args)
    records = load_dataset(args.dataset)
    if args.limit is not None:
        records = records[: args.limit]
    engine = Engine(kg, scorer, reasoner, config)
    report = run_eval(engine, records, workers=args.workers)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.as_dict(), ensure_ascii=False, indent=2), encoding="utf-8"
        )
        print(f"report written to {args.out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    kg = _build_kg(args)
    scorer, reasoner = _build_backends(args, kg)
    config = _build_config(args)
    state = ServiceState(
        kg=kg,
        scorer=scorer,
        reasoner=reasoner,
        config=config,
        store=RunStore(args.store),
    )
    app = build_app(state)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _cmd_render_prompt(args: argparse.Namespace) -> int:
    kind = PromptKind(args.kind)
    context: dict = {}
    if args.topic:
        context["topic"] = args.topic
    if args.relation:
        context["relation"] = args.relation
    if args.candidates:
        context["candidates"] = [c.strip() for c in args.candidates.split(";") if c.strip()]
    if args.path:
        context["paths"] = "\n".join(args.path)
        context["chains"] = "\n".join(args.path)
    print(build_prompt(kind, args.question, context, k=args.k))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgbeam", description="beam-search question answering over a knowledge graph"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="answer one question")
    _add_backend_flags(run)
    _add_search_flags(run)
    run.add_argument("--question", required=True)
    run.add_argument("--out", default=None, help="write the run document to this file")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="evaluate a JSONL dataset")
    _add_backend_flags(ev)
    _add_search_flags(ev)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--limit", type=int, default=None)
    ev.add_argument("--workers", type=int, default=1)
    ev.add_argument("--out", default=None, help="write the report to this file")
    ev.set_defaults(func=_cmd_eval)

    serve = sub.add_parser("serve", help="start the HTTP service")
    _add_backend_flags(serve)
    _add_search_flags(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--store", default="runs", help="trace store directory")
    serve.set_defaults(func=_cmd_serve)

    rp = sub.add_parser("render-prompt", help="print a prompt without calling anything")
    rp.add_argument("--kind", required=True, choices=[k.value for k in PromptKind])
    rp.add_argument("--question", required=True)
    rp.add_argument("--topic", default=None)
    rp.add_argument("--relation", default=None)
    rp.add_argument("--candidates", default=None, help="semicolon-separated names")
    rp.add_argument("--path", action="append", default=None, help="evidence line (repeatable)")
    rp.add_argument("--k", type=int, default=3)
    rp.set_defaults(func=_cmd_render_prompt)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, engine_mod.EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
