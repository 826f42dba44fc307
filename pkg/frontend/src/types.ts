/**
 * Document shapes exchanged with the run service.
 *
 * These mirror the JSON the service emits verbatim — the UI treats every
 * document as read-only and never recomputes a score it displays.
 */

export interface EntityRef {
  id: string;
  label: string | null;
}

export interface Hop {
  relation: string;
  direction: string; // "out" | "in"
  entity: EntityRef;
}

/** A reasoning path: origin entity plus concrete hops. */
export interface PathState {
  origin: EntityRef;
  hops: Hop[];
  score: number;
  dead_end: boolean;
}

/** A relation chain (relation-only variant): no intermediate entities. */
export interface ChainState {
  origin: EntityRef;
  relations: { relation: string; direction: string }[];
  tail: EntityRef;
  frontier: EntityRef[];
  score: number;
  dead_end: boolean;
}

export type BeamState = PathState | ChainState;

export function isChain(state: BeamState): state is ChainState {
  return "relations" in state;
}

export interface RelationCandidate {
  token: string;
  relation: string;
  direction: string;
}

export interface ScoredName {
  name: string;
  score: number;
}

export type CandidateRecord =
  | { stage: "relations"; sets: RelationCandidate[][] }
  | { stage: "entities"; sets: EntityRef[][] };

export interface ScoreRecord {
  stage: "relations" | "entities";
  sets: ScoredName[][];
}

/** One mid-beam entry: a base state paired with the relation chosen for it. */
export interface PendingState {
  base: BeamState;
  relation: string | null;
  direction: string | null;
  score: number;
  frontier: EntityRef[];
  rendered: string;
}

export interface DepthEvent {
  depth: number;
  beam_before: BeamState[];
  candidates: CandidateRecord[];
  scores: ScoreRecord[];
  mid_beam?: PendingState[];
  beam?: BeamState[];
  sufficient?: boolean;
  warnings: string[];
  reverted?: boolean;
  sampled?: string[];
}

export interface LedgerDoc {
  topic_extract: number;
  relation_prune: number;
  entity_prune: number;
  sufficiency: number;
  generate: number;
  total: number;
}

export interface OutcomeDoc {
  answer: string;
  raw_reply: string;
  fallback: boolean;
  depth_reached: number;
  paths: BeamState[];
  init_failed: boolean;
}

export interface TraceDocument {
  run_id: string;
  question: string;
  config: Record<string, unknown>;
  depths: DepthEvent[];
  warnings: string[];
  outcome: OutcomeDoc;
  ledger: LedgerDoc;
}

// ---- service request/response bodies ----

export interface AskResponse {
  run_id: string;
  answer: string;
  fallback: boolean;
  depth_reached: number;
  ledger: LedgerDoc;
}

export interface RunSummary {
  run_id: string;
  question: string;
  config: Record<string, unknown>;
  created_at: string;
  parent_run_id: string | null;
  error: string | null;
  outcome: (OutcomeDoc & { ledger: LedgerDoc }) | null;
}

export interface CorrectionBody {
  action: "replace_object" | "delete";
  subject: string;
  relation: string;
  object: string;
  new_object?: string;
  new_object_label?: string;
  note?: string;
}

export interface CorrectionResponse {
  run_id: string;
  parent_run_id: string;
  answer_before: string | null;
  answer_after: string;
  correction: {
    sequence: number;
    action: string;
    subject: string;
    relation: string;
    object: string;
    new_object: string | null;
    note: string;
  };
}

export interface KgStats {
  [key: string]: unknown;
}
