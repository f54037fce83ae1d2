import type { AnswerValues, Progress, SubmitResult, TaskPayload } from "./types.js";

/** Thin client over the documented /api endpoints. */
export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async nextTask(worker: string, exclude: readonly string[] = []): Promise<TaskPayload | null> {
    const params = new URLSearchParams({ worker });
    if (exclude.length > 0) {
      params.set("exclude", exclude.join(","));
    }
    const response = await fetch(this.url(`/api/tasks/next?${params}`));
    if (response.status === 204) {
      return null;
    }
    if (!response.ok) {
      throw new Error(`next task failed: ${response.status}`);
    }
    return (await response.json()) as TaskPayload;
  }

  async submitAnswers(
    taskId: string,
    worker: string,
    values: AnswerValues,
  ): Promise<SubmitResult> {
    const response = await fetch(this.url(`/api/tasks/${encodeURIComponent(taskId)}/answers`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ worker_id: worker, values }),
    });
    if (response.status === 201) {
      return { kind: "accepted" };
    }
    if (response.status === 409) {
      return { kind: "duplicate" };
    }
    if (response.status === 404) {
      return { kind: "gone" };
    }
    if (response.status === 422) {
      const body = (await response.json()) as { errors?: { field: string; message: string }[] };
      return { kind: "invalid", errors: body.errors ?? [] };
    }
    throw new Error(`submit failed: ${response.status}`);
  }

  async progress(): Promise<Progress> {
    const response = await fetch(this.url("/api/progress"));
    if (!response.ok) {
      throw new Error(`progress failed: ${response.status}`);
    }
    return (await response.json()) as Progress;
  }

  async flagTask(taskId: string, worker: string, reason: string): Promise<void> {
    await fetch(this.url(`/api/tasks/${encodeURIComponent(taskId)}/flag`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ worker_id: worker, reason }),
    });
  }
}
