import { describe, expect, it } from "vitest";

import {
  buildPayload,
  completeWithDefaults,
  guardCombinations,
  isComplete,
  pruneHidden,
  visibleQuestions,
} from "../src/guards.js";
import { QUESTIONS, QUESTION_IDS } from "../src/questions.js";

describe("guard closure", () => {
  it("only the root question is visible initially", () => {
    expect([...visibleQuestions({})]).toEqual(["q1"]);
  });

  it("q1=No keeps everything else hidden", () => {
    expect([...visibleQuestions({ q1: "No" })]).toEqual(["q1"]);
  });

  it("q1=Yes, q3=Yes opens the people block", () => {
    const visible = visibleQuestions({ q1: "Yes", q3: "Yes" });
    for (const qid of ["q4", "q7", "q8"]) {
      expect(visible.has(qid), qid).toBe(true);
    }
    expect(visible.has("q5")).toBe(false); // needs a mask answer first
  });

  it("q4=No hides the mask-detail questions", () => {
    const visible = visibleQuestions({ q1: "Yes", q3: "Yes", q4: "No" });
    expect(visible.has("q5")).toBe(false);
    expect(visible.has("q6")).toBe(false);
  });

  it("q9 other than Yes hides q10", () => {
    for (const answer of ["No", "Not sure"]) {
      expect(visibleQuestions({ q1: "Yes", q9: answer }).has("q10")).toBe(false);
    }
    expect(visibleQuestions({ q1: "Yes", q9: "Yes" }).has("q10")).toBe(true);
  });
});

describe("pruning", () => {
  it("no answered value survives for a hidden question", () => {
    const values = {
      q1: "Yes", q3: "Yes", q4: "Yes", q5: "Cloth", q6: "Yes",
    };
    const afterChange = pruneHidden({ ...values, q4: "No" });
    expect(afterChange["q5"]).toBeNull();
    expect(afterChange["q6"]).toBeNull();
  });

  it("flipping q1 to No nulls everything downstream", () => {
    const filled = completeWithDefaults({ q1: "Yes", q3: "Yes", q4: "Yes", q9: "Yes" });
    const collapsed = pruneHidden({ ...filled, q1: "No" });
    for (const qid of QUESTION_IDS) {
      if (qid !== "q1") {
        expect(collapsed[qid], qid).toBeNull();
      }
    }
  });

  it("payload always carries every question id", () => {
    const payload = buildPayload({ q1: "No" });
    expect(Object.keys(payload).sort()).toEqual([...QUESTION_IDS].sort());
  });
});

describe("completeness", () => {
  it("q1=No alone is a complete form", () => {
    expect(isComplete({ q1: "No" })).toBe(true);
  });

  it("q1=Yes alone is incomplete", () => {
    expect(isComplete({ q1: "Yes" })).toBe(false);
  });

  it("defaults fill yields a complete form", () => {
    expect(isComplete(completeWithDefaults({ q1: "Yes", q3: "Yes" }))).toBe(true);
  });
});

describe("guard tree enumeration", () => {
  it("covers every option of every guard-relevant question", () => {
    const combos = guardCombinations();
    const guardQids = new Set(
      QUESTIONS.filter((q) => QUESTIONS.some((o) => o.guard?.qid === q.qid)).map((q) => q.qid),
    );
    for (const qid of guardQids) {
      const question = QUESTIONS.find((q) => q.qid === qid)!;
      const seen = new Set(
        combos.map((c) => c[qid]).filter((v): v is string => v != null),
      );
      expect([...seen].sort()).toEqual([...question.options].sort());
    }
    // Distinct visibility shapes: 3 q1 roots, q3/q4/q9 branching under Yes.
    expect(combos.length).toBe(20);
  });

  it("every combination is complete and self-consistent", () => {
    for (const combo of guardCombinations()) {
      expect(isComplete(combo)).toBe(true);
      expect(buildPayload(combo)).toEqual(combo);
    }
  });
});
