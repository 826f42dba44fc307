"""kgbeam: beam-search question answering over a knowledge graph.

An LLM (or a cheaper stand-in scorer) steers an iterative beam search over
graph triples — alternating relation and entity exploration, checking after
every depth whether the collected paths already answer the question — and
every run leaves a replayable trace.
"""

from .engine import (
    CallLedger,
    Engine,
    EngineError,
    EntityPruneMode,
    InitializationError,
    Outcome,
    PruneMode,
    ReasoningPath,
    RelationChain,
    ReplayError,
    SearchConfig,
    Trace,
    Variant,
    canonical_json,
    random_prune,
    search_config_from_dict,
    verify_trace_replay,
)
from .evaluation import (
    DatasetRecord,
    MetricsReport,
    exact_match,
    load_dataset,
    overlap_ratio,
    reasoning_depth,
    run_eval,
)
from .kg import (
    Correction,
    CorrectionError,
    Direction,
    EntityRef,
    GraphParseError,
    KnowledgeGraph,
    RelationRef,
    Triple,
    load_graph,
)
from .prompts import (
    PathRendering,
    PromptKind,
    PromptParseError,
    ScoredItem,
    build_prompt,
    parse_answer,
    parse_scored_list,
    parse_verdict,
    render_beam,
    render_path,
)
from .scoring import (
    EmbeddingScorer,
    LexicalScorer,
    LLMConfig,
    LLMUnavailableError,
    PruneContext,
    PruneKind,
    RemoteLLMBackend,
    ScriptedBackend,
)
from .service import RunStore, ServiceState, build_app
from .sparql import (
    EndpointConfig,
    QueryTemplate,
    SparqlClient,
    SparqlKnowledgeGraph,
    render_query,
)

__version__ = "0.1.0"
