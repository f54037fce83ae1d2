import type { ApiClient } from "./api.js";
import { buildPayload, isComplete, pruneHidden, visibleQuestions } from "./guards.js";
import type { AnswerValues, FieldError, TaskPayload } from "./types.js";

export type SessionStatus =
  | "idle"
  | "loading"
  | "annotating"
  | "submitting"
  | "done"
  | "error";

/**
 * DOM-free session state machine: fetches tasks, tracks the answer form and
 * its guard-driven visibility, submits, and advances. Network failures keep
 * the form intact behind a retry affordance; server rejections surface
 * inline without losing entered answers.
 */
export class AnnotationSession {
  status: SessionStatus = "idle";
  task: TaskPayload | null = null;
  values: AnswerValues = {};
  fieldErrors: FieldError[] = [];
  lastError: string | null = null;
  completedThisSession = 0;
  duplicateCount = 0;
  private skipped: string[] = [];

  constructor(
    private readonly api: ApiClient,
    readonly worker: string,
  ) {}

  visible(): Set<string> {
    return visibleQuestions(this.values);
  }

  canSubmit(): boolean {
    return this.status === "annotating" && this.task !== null && isComplete(this.values);
  }

  payload(): AnswerValues {
    return buildPayload(this.values);
  }

  /** Record an answer; anything the new visibility hides is nulled at once. */
  answer(qid: string, value: string): void {
    if (this.status !== "annotating") {
      return;
    }
    this.values = pruneHidden({ ...this.values, [qid]: value });
    this.fieldErrors = this.fieldErrors.filter((e) => e.field !== qid);
  }

  async start(): Promise<void> {
    await this.fetchNext();
  }

  private async fetchNext(): Promise<void> {
    this.status = "loading";
    this.lastError = null;
    try {
      const task = await this.api.nextTask(this.worker, this.skipped);
      if (task === null) {
        this.task = null;
        this.status = "done";
        return;
      }
      this.task = task;
      this.values = {};
      this.fieldErrors = [];
      this.status = "annotating";
    } catch (error) {
      this.lastError = String(error);
      this.status = "error";
    }
  }

  async submit(): Promise<void> {
    if (!this.canSubmit() || this.task === null) {
      return;
    }
    this.status = "submitting";
    const task = this.task;
    try {
      const result = await this.api.submitAnswers(task.task_id, this.worker, this.payload());
      switch (result.kind) {
        case "accepted":
          this.completedThisSession += 1;
          await this.fetchNext();
          return;
        case "duplicate":
          // Stale assignment (e.g. double submit): count it and move on.
          this.duplicateCount += 1;
          this.skipped.push(task.task_id);
          await this.fetchNext();
          return;
        case "gone":
          this.skipped.push(task.task_id);
          await this.fetchNext();
          return;
        case "invalid":
          this.fieldErrors = result.errors;
          this.status = "annotating";
          return;
      }
    } catch (error) {
      // Network failure: keep the form, offer retry.
      this.lastError = String(error);
      this.status = "annotating";
    }
  }

  /** Release the current assignment (e.g. the image failed to load). */
  async skipCurrent(): Promise<void> {
    if (this.task === null) {
      return;
    }
    this.skipped.push(this.task.task_id);
    await this.fetchNext();
  }

  async reportCurrent(reason: string): Promise<void> {
    if (this.task === null) {
      return;
    }
    await this.api.flagTask(this.task.task_id, this.worker, reason);
  }
}
