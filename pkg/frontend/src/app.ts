/**
 * Application shell: wires the service client to the renderers and owns the
 * small amount of interactive state — which run is loaded, an optional
 * before/after comparison, and the correction form.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  el,
  renderBreadcrumb,
  renderDiff,
  renderErrorBanner,
  renderTracePane,
} from "./render.js";
import type { CorrectionBody, TraceDocument } from "./types.js";
import {
  answerDiff,
  correctableTriples,
  type AnswerDiff,
  type CorrectableTriple,
} from "./view.js";

interface LoadedRun {
  runId: string;
  trace: TraceDocument;
}

interface AppState {
  current: LoadedRun | null;
  previous: LoadedRun | null; // set right after a correction, for side-by-side
  diff: AnswerDiff | null;
  chain: string[]; // provenance, newest first
  error: string | null;
  correctionError: string | null;
}

export class App {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private state: AppState = {
    current: null,
    previous: null,
    diff: null,
    chain: [],
    error: null,
    correctionError: null,
  };
  private correcting = false;
  private lastAction: (() => Promise<void>) | null = null;

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
    this.render();
  }

  async loadRun(runId: string): Promise<void> {
    this.lastAction = () => this.loadRun(runId);
    try {
      const trace = await this.api.trace(runId);
      const chain = await this.api.provenance(runId);
      this.state = {
        current: { runId, trace },
        previous: null,
        diff: null,
        chain,
        error: null,
        correctionError: null,
      };
    } catch (error) {
      this.state = { ...this.state, error: describe(error) };
    }
    this.render();
  }

  async ask(question: string): Promise<void> {
    this.lastAction = () => this.ask(question);
    try {
      const response = await this.api.ask(question);
      await this.loadRun(response.run_id);
      return;
    } catch (error) {
      this.state = { ...this.state, error: describe(error) };
    }
    this.render();
  }

  async submitCorrection(body: CorrectionBody): Promise<void> {
    const current = this.state.current;
    if (!current || this.correcting) return;
    this.correcting = true;
    this.render();
    try {
      const response = await this.api.correct(current.runId, body);
      const trace = await this.api.trace(response.run_id);
      const chain = await this.api.provenance(response.run_id);
      this.state = {
        current: { runId: response.run_id, trace },
        previous: current,
        diff: answerDiff(response.answer_before, response.answer_after),
        chain,
        error: null,
        correctionError: null,
      };
    } catch (error) {
      // the rejection reason is shown verbatim; the loaded view stays intact
      this.state = { ...this.state, correctionError: describe(error) };
    } finally {
      this.correcting = false;
    }
    this.render();
  }

  // ---- rendering ----

  private render(): void {
    this.root.textContent = "";
    this.root.appendChild(this.renderToolbar());
    if (this.state.error !== null) {
      this.root.appendChild(
        renderErrorBanner(this.state.error, () => {
          void this.lastAction?.();
        }),
      );
    }
    const { current, previous, diff } = this.state;
    if (!current) {
      this.root.appendChild(el("div", "empty", "load a run or ask a question"));
      return;
    }
    if (this.state.chain.length > 1) {
      this.root.appendChild(renderBreadcrumb(this.state.chain, current.runId));
    }
    if (previous && diff) {
      this.root.appendChild(renderDiff(diff));
      const comparison = el("div", "comparison");
      comparison.appendChild(renderTracePane(previous.trace, "before"));
      comparison.appendChild(renderTracePane(current.trace, "after"));
      this.root.appendChild(comparison);
    } else {
      this.root.appendChild(renderTracePane(current.trace, "single"));
    }
    this.root.appendChild(this.renderCorrectionCard(current.trace));
  }

  private renderToolbar(): HTMLElement {
    const bar = el("div", "toolbar");

    const askForm = el("form", "ask-form");
    const question = el("input", "question-input");
    question.name = "question";
    question.placeholder = "ask a question…";
    const askButton = el("button", "", "ask");
    askButton.type = "submit";
    askForm.append(question, askButton);
    askForm.addEventListener("submit", (event) => {
      event.preventDefault();
      if (question.value.trim()) void this.ask(question.value.trim());
    });

    const loadForm = el("form", "load-form");
    const runInput = el("input", "run-input");
    runInput.name = "run";
    runInput.placeholder = "run id";
    const loadButton = el("button", "", "load run");
    loadButton.type = "submit";
    loadForm.append(runInput, loadButton);
    loadForm.addEventListener("submit", (event) => {
      event.preventDefault();
      if (runInput.value.trim()) void this.loadRun(runInput.value.trim());
    });

    bar.append(askForm, loadForm);
    return bar;
  }

  private renderCorrectionCard(trace: TraceDocument): HTMLElement {
    const card = el("div", "correction-card");
    card.appendChild(el("div", "card-title", "correct a triple and re-ask"));
    const triples = correctableTriples(trace);
    if (triples.length === 0) {
      card.appendChild(el("div", "empty", "no graph triples in the displayed paths"));
      return card;
    }

    const form = el("form", "correction-form");
    const tripleSelect = el("select", "triple-select");
    tripleSelect.name = "triple";
    for (const triple of triples) {
      const option = el("option", "", triple.label);
      option.value = triple.key;
      tripleSelect.appendChild(option);
    }

    const actionSelect = el("select", "action-select");
    actionSelect.name = "action";
    for (const action of ["replace_object", "delete"] as const) {
      const option = el("option", "", action);
      option.value = action;
      actionSelect.appendChild(option);
    }

    const newObject = el("input", "new-object");
    newObject.name = "new_object";
    newObject.placeholder = "replacement entity id";
    const newLabel = el("input", "new-object-label");
    newLabel.name = "new_object_label";
    newLabel.placeholder = "replacement label";
    const note = el("input", "note");
    note.name = "note";
    note.placeholder = "note";

    const submit = el("button", "correct-submit", "correct & re-ask");
    submit.type = "submit";
    submit.disabled = this.correcting;

    form.append(tripleSelect, actionSelect, newObject, newLabel, note, submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const selected = triples.find((t) => t.key === tripleSelect.value);
      if (!selected) return;
      const body: CorrectionBody = {
        action: actionSelect.value as CorrectionBody["action"],
        subject: selected.subject.id,
        relation: selected.relation,
        object: selected.object.id,
        note: note.value,
      };
      if (body.action === "replace_object") {
        body.new_object = newObject.value.trim();
        body.new_object_label = newLabel.value.trim() || undefined;
      }
      void this.submitCorrection(body);
    });
    card.appendChild(form);
    if (this.state.correctionError !== null) {
      card.appendChild(el("div", "correction-error", this.state.correctionError));
    }
    return card;
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return error.detail;
  if (error instanceof Error) return error.message;
  return String(error);
}
