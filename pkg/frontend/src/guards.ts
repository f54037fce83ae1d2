import { QUESTIONS } from "./questions.js";
import type { AnswerValues, Question } from "./types.js";

/**
 * Guard closure: a question is visible iff its guard question is itself
 * visible and currently answered with an enabling value.
 */
export function visibleQuestions(values: AnswerValues): Set<string> {
  const visible = new Set<string>();
  for (const q of QUESTIONS) {
    if (q.guard === null) {
      visible.add(q.qid);
      continue;
    }
    const answer = values[q.guard.qid];
    if (visible.has(q.guard.qid) && answer != null && q.guard.values.includes(answer)) {
      visible.add(q.qid);
    }
  }
  return visible;
}

/** Null out every answer whose question is no longer visible. */
export function pruneHidden(values: AnswerValues): AnswerValues {
  const visible = visibleQuestions(values);
  const pruned: AnswerValues = {};
  for (const q of QUESTIONS) {
    pruned[q.qid] = visible.has(q.qid) ? values[q.qid] ?? null : null;
  }
  return pruned;
}

/** True when every visible question has an answer. */
export function isComplete(values: AnswerValues): boolean {
  const visible = visibleQuestions(values);
  return QUESTIONS.every((q) => !visible.has(q.qid) || values[q.qid] != null);
}

/**
 * The exact wire payload: one key per question, nulls for hidden questions.
 */
export function buildPayload(values: AnswerValues): AnswerValues {
  return pruneHidden(values);
}

function guardRelevant(q: Question): boolean {
  return QUESTIONS.some((other) => other.guard?.qid === q.qid);
}

/**
 * Every reachable combination of the guard tree: guard-relevant questions
 * range over their full option sets, the rest get a fixed representative
 * answer when visible. Enumerates the distinct visibility shapes a
 * submission can take.
 */
export function guardCombinations(): AnswerValues[] {
  const relevant = QUESTIONS.filter(guardRelevant);
  const combos: AnswerValues[] = [];

  const assign = (index: number, partial: AnswerValues): void => {
    if (index === relevant.length) {
      combos.push(completeWithDefaults(partial));
      return;
    }
    const q = relevant[index]!;
    if (!visibleQuestions(partial).has(q.qid)) {
      assign(index + 1, partial);
      return;
    }
    for (const option of q.options) {
      assign(index + 1, { ...partial, [q.qid]: option });
    }
  };

  assign(0, {});
  return combos;
}

/** Fill every visible unanswered question with its first option. */
export function completeWithDefaults(partial: AnswerValues): AnswerValues {
  const values: AnswerValues = { ...partial };
  for (const q of QUESTIONS) {
    if (visibleQuestions(values).has(q.qid) && values[q.qid] == null) {
      values[q.qid] = q.options[0]!;
    }
  }
  return buildPayload(values);
}
