import { describe, expect, it } from "vitest";

import type { DepthEvent, PathState, TraceDocument } from "../src/types.js";
import {
  answerDiff,
  beamLine,
  correctableTriples,
  depthColumn,
  depthColumns,
  formatScore,
  makeView,
  scoreOpacity,
  segmentsFor,
  selectDepth,
  selectPath,
} from "../src/view.js";

import traceBefore from "./fixtures/trace-before.json";

const TRACE = traceBefore as unknown as TraceDocument;

function deepFreeze<T>(value: T): T {
  if (value !== null && typeof value === "object") {
    for (const child of Object.values(value as object)) deepFreeze(child);
    Object.freeze(value);
  }
  return value;
}

describe("formatScore", () => {
  it("prints scores exactly as the document serialized them", () => {
    expect(formatScore(0.5)).toBe("0.5");
    expect(formatScore(0.4)).toBe("0.4");
    expect(formatScore(0.1)).toBe("0.1");
    expect(formatScore(1.0)).toBe("1.0");
    expect(formatScore(0.3333333333333333)).toBe("0.3333333333333333");
  });
});

describe("scoreOpacity", () => {
  it("maps score to opacity linearly with a visibility floor", () => {
    expect(scoreOpacity(0)).toBeCloseTo(0.25, 12);
    expect(scoreOpacity(1)).toBeCloseTo(1.0, 12);
    expect(scoreOpacity(0.5)).toBeCloseTo(0.625, 12);
  });

  it("clamps scores outside the unit interval", () => {
    expect(scoreOpacity(-3)).toBeCloseTo(0.25, 12);
    expect(scoreOpacity(7)).toBeCloseTo(1.0, 12);
  });
});

describe("depthColumns on the recorded run", () => {
  it("projects one column with three scored chains", () => {
    const columns = depthColumns(TRACE);
    expect(columns).toHaveLength(1);
    const [column] = columns;
    expect(column!.beam.map((line) => line.badge)).toEqual(["0.5", "0.4", "0.1"]);
    expect(column!.sufficient).toBe(true);
    expect(column!.reverted).toBe(false);
  });

  it("spells out the top chain as entity–relation–entity segments", () => {
    const top = depthColumns(TRACE)[0]!.beam[0]!;
    expect(top.segments.map((s) => s.text)).toEqual([
      "Canberra",
      "capital of",
      "Australia",
    ]);
    expect(top.segments.map((s) => s.kind)).toEqual(["entity", "relation", "entity"]);
  });

  it("finds nothing pruned when the beam kept every candidate", () => {
    const [column] = depthColumns(TRACE);
    expect(column!.prunedRelations).toEqual([]);
    expect(column!.prunedEntities).toEqual([]);
  });

  it("never mutates the trace document", () => {
    const frozen = deepFreeze(JSON.parse(JSON.stringify(traceBefore)) as TraceDocument);
    expect(() => {
      depthColumns(frozen);
      correctableTriples(frozen);
    }).not.toThrow();
  });
});

// A hand-built event where pruning actually discards candidates: one source
// state with four scored relations of which two survive, and one pending
// whose three entities collapse to a single kept path.
function prunedEvent(): DepthEvent {
  const origin = { id: "m.0x", label: "Xanadu" };
  const base: PathState = { origin, hops: [], score: 1.0, dead_end: false };
  const kept = (id: string, label: string, relation: string, score: number): PathState => ({
    origin,
    hops: [{ relation, direction: "out", entity: { id, label } }],
    score,
    dead_end: false,
  });
  return {
    depth: 1,
    beam_before: [base],
    candidates: [
      {
        stage: "relations",
        sets: [
          [
            { token: "borders", relation: "borders", direction: "out" },
            { token: "ruler", relation: "ruler", direction: "out" },
            { token: "river", relation: "river", direction: "out" },
            { token: "anthem", relation: "anthem", direction: "out" },
          ],
        ],
      },
      {
        stage: "entities",
        sets: [
          [
            { id: "m.0a", label: "Alph" },
            { id: "m.0b", label: "Beta" },
            { id: "m.0c", label: "Gamma" },
          ],
          [{ id: "m.0k", label: "Kubla" }],
        ],
      },
    ],
    scores: [
      {
        stage: "relations",
        sets: [
          [
            { name: "river", score: 0.6 },
            { name: "ruler", score: 0.3 },
            { name: "borders", score: 0.07 },
            { name: "anthem", score: 0.03 },
          ],
        ],
      },
      {
        stage: "entities",
        sets: [
          [
            { name: "Alph", score: 0.8 },
            { name: "Beta", score: 0.15 },
            { name: "Gamma", score: 0.05 },
          ],
          [{ name: "Kubla", score: 1.0 }],
        ],
      },
    ],
    mid_beam: [
      {
        base,
        relation: "river",
        direction: "out",
        score: 0.6,
        frontier: [],
        rendered: "Xanadu → river",
      },
      {
        base,
        relation: "ruler",
        direction: "out",
        score: 0.3,
        frontier: [],
        rendered: "Xanadu → ruler",
      },
    ],
    beam: [kept("m.0a", "Alph", "river", 0.7), kept("m.0k", "Kubla", "ruler", 0.3)],
    sufficient: false,
    warnings: ["anthem scored near zero"],
  };
}

describe("depthColumn pruning", () => {
  it("lists scored relations that were not kept, de-emphasized", () => {
    const column = depthColumn(prunedEvent());
    expect(column.prunedRelations.map((p) => p.name)).toEqual(["borders", "anthem"]);
    expect(column.prunedRelations.map((p) => p.badge)).toEqual(["0.07", "0.03"]);
    expect(column.prunedRelations[0]!.source).toBe("Xanadu");
  });

  it("lists scored entities that fell out of the beam", () => {
    const column = depthColumn(prunedEvent());
    expect(column.prunedEntities.map((p) => p.name)).toEqual(["Beta", "Gamma"]);
    expect(column.prunedEntities[0]!.source).toBe("Xanadu → river");
  });

  it("propagates warnings to the column", () => {
    expect(depthColumn(prunedEvent()).warnings).toEqual(["anthem scored near zero"]);
  });
});

describe("relation chains", () => {
  const chain = {
    origin: { id: "m.0x", label: "Xanadu" },
    relations: [
      { relation: "river", direction: "out" },
      { relation: "flows into", direction: "out" },
    ],
    tail: { id: "m.0sea", label: "Sunless Sea" },
    frontier: [{ id: "m.0sea", label: "Sunless Sea" }],
    score: 0.75,
    dead_end: false,
  };

  it("renders origin and relations but never the tail entity", () => {
    const texts = segmentsFor(chain).map((s) => s.text);
    expect(texts).toEqual(["Xanadu", "river", "flows into"]);
    expect(texts).not.toContain("Sunless Sea");
  });

  it("badges the chain score verbatim", () => {
    expect(beamLine(chain).badge).toBe("0.75");
  });
});

describe("correctableTriples", () => {
  it("collects exactly the triples shown in the recorded paths", () => {
    const triples = correctableTriples(TRACE);
    expect(triples).toHaveLength(3);
    const capital = triples.find((t) => t.relation === "capital of");
    expect(capital).toBeDefined();
    expect(capital!.subject.id).toBe("m.0canb");
    expect(capital!.object.id).toBe("m.0au");
    expect(capital!.label).toBe("Canberra — capital of → Australia");
  });

  it("orients inward hops as (neighbor, relation, previous)", () => {
    const trace = JSON.parse(JSON.stringify(traceBefore)) as TraceDocument;
    const inward: PathState = {
      origin: { id: "m.0au", label: "Australia" },
      hops: [
        { relation: "capital of", direction: "in", entity: { id: "m.0canb", label: "Canberra" } },
      ],
      score: 1.0,
      dead_end: false,
    };
    trace.depths = [];
    trace.outcome.paths = [inward];
    const [triple] = correctableTriples(trace);
    expect(triple!.subject.id).toBe("m.0canb");
    expect(triple!.object.id).toBe("m.0au");
  });
});

describe("answerDiff", () => {
  it("flags a changed answer", () => {
    expect(answerDiff("Australia", "Commonwealth of Australia")).toEqual({
      before: "Australia",
      after: "Commonwealth of Australia",
      changed: true,
    });
  });

  it("treats a missing before-answer as empty", () => {
    expect(answerDiff(null, "Sydney").changed).toBe(true);
  });

  it("reports unchanged answers", () => {
    expect(answerDiff("same", "same").changed).toBe(false);
  });
});

describe("view selection", () => {
  it("clamps depth and path indices into bounds", () => {
    const view = makeView(TRACE);
    expect(selectDepth(view, -4).selectedDepth).toBe(0);
    expect(selectDepth(view, 99).selectedDepth).toBe(0);
    expect(selectPath(view, 99).selectedPath).toBe(2);
    expect(selectPath(view, -1).selectedPath).toBe(0);
  });

  it("keeps the trace untouched while selecting", () => {
    const before = JSON.stringify(TRACE);
    const view = makeView(TRACE);
    selectPath(selectDepth(view, 3), 5);
    expect(JSON.stringify(TRACE)).toBe(before);
  });
});
