/** Wire types for the annotation service API. */

export interface TaskPayload {
  task_id: string;
  post_id: string;
  image_path: string | null;
  image_url: string | null;
  tweet_text: string;
  country: string;
  display_name: string;
  redundancy: number;
  completions: number;
  status: "open" | "complete";
}

/** Answer map: every question id present, null when the question is hidden. */
export type AnswerValues = Record<string, string | null>;

export interface FieldError {
  field: string;
  message: string;
}

export interface Progress {
  open: number;
  complete: number;
  answers: number;
}

export interface Question {
  qid: string;
  text: string;
  options: readonly string[];
  /** Visible only when the guard question's answer is in `values`. */
  guard: { qid: string; values: readonly string[] } | null;
}

export type SubmitResult =
  | { kind: "accepted" }
  | { kind: "duplicate" }
  | { kind: "invalid"; errors: FieldError[] }
  | { kind: "gone" };
