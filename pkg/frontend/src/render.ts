/**
 * DOM builders. All data lands in the document via textContent, never
 * markup interpolation; every number shown comes from a formatScore of a
 * document field.
 */

import type { LedgerDoc, OutcomeDoc, TraceDocument } from "./types.js";
import {
  depthColumns,
  type AnswerDiff,
  type BeamLine,
  type DepthColumn,
  type PrunedItem,
} from "./view.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderBeamLine(line: BeamLine): HTMLElement {
  const item = el("div", "beam-path" + (line.deadEnd ? " dead-end" : ""));
  item.style.opacity = String(line.opacity);
  item.appendChild(el("span", "score-badge", line.badge));
  const chain = el("span", "chain");
  for (const segment of line.segments) {
    const span = el(
      "span",
      segment.kind === "entity" ? "seg-entity" : "seg-relation",
      segment.text,
    );
    if (segment.direction) span.dataset.direction = segment.direction;
    chain.appendChild(span);
  }
  item.appendChild(chain);
  if (line.deadEnd) item.appendChild(el("span", "dead-end-chip", "dead end"));
  return item;
}

function renderPruned(title: string, items: PrunedItem[]): HTMLElement {
  const section = el("div", "pruned");
  section.appendChild(el("div", "pruned-title", title));
  for (const item of items) {
    const row = el("div", "pruned-item");
    row.appendChild(el("span", "score-badge dim", item.badge));
    row.appendChild(el("span", "pruned-name", item.name));
    if (item.source) row.appendChild(el("span", "pruned-source", `from ${item.source}`));
    section.appendChild(row);
  }
  return section;
}

export function renderColumn(column: DepthColumn): HTMLElement {
  const root = el("div", "depth-column");
  root.dataset.depth = String(column.depth);

  const header = el("div", "column-header");
  header.appendChild(el("span", "depth-label", `depth ${column.depth}`));
  header.appendChild(
    el(
      "span",
      column.sufficient ? "sufficiency-chip yes" : "sufficiency-chip no",
      column.sufficient ? "sufficient" : "insufficient",
    ),
  );
  if (column.reverted) header.appendChild(el("span", "reverted-chip", "reverted"));
  if (column.warnings.length > 0) {
    const marker = el("span", "warning-marker", `⚠ ${column.warnings.length}`);
    marker.title = column.warnings.join("\n");
    root.classList.add("has-warnings");
    header.appendChild(marker);
  }
  root.appendChild(header);

  const beam = el("div", "beam");
  for (const line of column.beam) beam.appendChild(renderBeamLine(line));
  root.appendChild(beam);

  if (column.sampled.length > 0) {
    root.appendChild(el("div", "sampled-chip", `sampled: ${column.sampled.join(", ")}`));
  }
  if (column.prunedRelations.length > 0) {
    root.appendChild(renderPruned("pruned relations", column.prunedRelations));
  }
  if (column.prunedEntities.length > 0) {
    root.appendChild(renderPruned("pruned entities", column.prunedEntities));
  }
  return root;
}

function renderOutcome(outcome: OutcomeDoc): HTMLElement {
  const panel = el("div", "answer-panel");
  const row = el("div", "answer-row");
  row.appendChild(el("span", "answer-label", "answer"));
  row.appendChild(el("span", "answer-text", outcome.answer));
  panel.appendChild(row);
  if (outcome.fallback) {
    panel.appendChild(
      el(
        "div",
        "fallback-banner",
        outcome.init_failed
          ? "no topic entity found in the graph — answered from inherent knowledge"
          : "depth budget exhausted — answered from inherent knowledge",
      ),
    );
  }
  return panel;
}

function renderLedger(ledger: LedgerDoc): HTMLElement {
  const footer = el("div", "ledger-footer");
  const parts = [
    `calls ${ledger.total}`,
    `relations ${ledger.relation_prune}`,
    `entities ${ledger.entity_prune}`,
    `sufficiency ${ledger.sufficiency}`,
    `generate ${ledger.generate}`,
  ];
  footer.textContent = parts.join(" · ");
  return footer;
}

export function renderTracePane(trace: TraceDocument, role: string): HTMLElement {
  const pane = el("div", `run-pane ${role}`);
  const header = el("div", "run-header");
  header.appendChild(el("span", "run-id", trace.run_id));
  header.appendChild(el("span", "run-question", trace.question));
  pane.appendChild(header);
  pane.appendChild(renderOutcome(trace.outcome));
  if (trace.warnings.length > 0) {
    const list = el("ul", "trace-warnings");
    for (const warning of trace.warnings) list.appendChild(el("li", "", warning));
    pane.appendChild(list);
  }
  const columns = el("div", "columns");
  for (const column of depthColumns(trace)) columns.appendChild(renderColumn(column));
  pane.appendChild(columns);
  pane.appendChild(renderLedger(trace.ledger));
  return pane;
}

export function renderDiff(diff: AnswerDiff): HTMLElement {
  const panel = el("div", "answer-diff" + (diff.changed ? " changed" : " unchanged"));
  panel.appendChild(el("span", "diff-label", "answer"));
  panel.appendChild(el("span", "diff-before", diff.before));
  panel.appendChild(el("span", "diff-arrow", "→"));
  panel.appendChild(el("span", "diff-after", diff.after));
  if (!diff.changed) panel.appendChild(el("span", "diff-note", "(unchanged)"));
  return panel;
}

export function renderBreadcrumb(chainNewestFirst: string[], activeId: string): HTMLElement {
  const nav = el("nav", "provenance");
  // the chain arrives newest → oldest; read it oldest → newest
  const oldestFirst = [...chainNewestFirst].reverse();
  oldestFirst.forEach((runId, index) => {
    if (index > 0) nav.appendChild(el("span", "crumb-sep", "›"));
    const crumb = el("span", "crumb" + (runId === activeId ? " active" : ""), runId);
    crumb.dataset.runId = runId;
    nav.appendChild(crumb);
  });
  return nav;
}

export function renderErrorBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "error-banner");
  banner.appendChild(el("span", "error-text", message));
  const retry = el("button", "retry", "retry");
  retry.type = "button";
  retry.addEventListener("click", onRetry);
  banner.appendChild(retry);
  return banner;
}
