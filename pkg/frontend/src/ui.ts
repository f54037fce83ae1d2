import type { AnnotationSession } from "./controller.js";
import { QUESTIONS } from "./questions.js";

const NSFW_BANNER_KEY = "sensepipe-nsfw-banner-seen";

/**
 * Render the session into a container. Questions appear in order; hidden
 * ones collapse. Number keys 1-9 answer the first unanswered visible
 * question for keyboard-first throughput.
 */
export function render(session: AnnotationSession, root: HTMLElement): void {
  root.textContent = "";
  maybeShowNsfwBanner(root);

  if (session.status === "loading" || session.status === "submitting") {
    root.appendChild(el("p", "status", "Working..."));
    return;
  }
  if (session.status === "done") {
    root.appendChild(
      el("p", "done", `All done — ${session.completedThisSession} tasks this session. Thank you!`),
    );
    return;
  }
  if (session.status === "error") {
    root.appendChild(el("p", "error", `Connection problem: ${session.lastError ?? "unknown"}`));
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => {
      void session.start().then(() => render(session, root));
    });
    root.appendChild(retry);
    return;
  }
  const task = session.task;
  if (task === null) {
    return;
  }

  const pane = el("div", "task-pane", "");
  const media = el("div", "media", "");
  if (task.image_url) {
    const img = document.createElement("img");
    img.src = task.image_url;
    img.alt = "post image";
    img.addEventListener("error", () => {
      media.textContent = "";
      media.appendChild(el("div", "placeholder", "Image failed to load."));
      const skip = el("button", "skip", "Skip this task");
      skip.addEventListener("click", () => {
        void session.skipCurrent().then(() => render(session, root));
      });
      media.appendChild(skip);
    });
    media.appendChild(img);
  }
  media.appendChild(el("p", "tweet-text", task.tweet_text));
  media.appendChild(el("p", "proposed-location", `Proposed location: ${task.display_name}`));
  const reportButton = el("button", "report", "Report inappropriate content");
  reportButton.addEventListener("click", () => {
    void session.reportCurrent("inappropriate-content");
    reportButton.replaceWith(el("span", "reported", "Reported — thank you."));
  });
  media.appendChild(reportButton);
  pane.appendChild(media);

  const form = el("div", "questions", "");
  const visible = session.visible();
  const errorsByField = new Map(session.fieldErrors.map((e) => [e.field, e.message]));
  for (const question of QUESTIONS) {
    if (!visible.has(question.qid)) {
      continue;
    }
    const block = el("fieldset", "question", "");
    block.dataset["qid"] = question.qid;
    block.appendChild(el("legend", "question-text", question.text));
    question.options.forEach((option, index) => {
      const label = el("label", "option", "");
      const input = document.createElement("input");
      input.type = "radio";
      input.name = question.qid;
      input.value = option;
      input.checked = session.values[question.qid] === option;
      input.addEventListener("change", () => {
        session.answer(question.qid, option);
        render(session, root);
      });
      label.appendChild(input);
      label.appendChild(document.createTextNode(` ${index + 1}. ${option}`));
      block.appendChild(label);
    });
    const message = errorsByField.get(question.qid);
    if (message) {
      block.appendChild(el("p", "field-error", message));
    }
    form.appendChild(block);
  }
  pane.appendChild(form);

  if (session.lastError) {
    pane.appendChild(el("p", "error", `Submit failed: ${session.lastError}. Your answers are kept.`));
  }
  const submit = el("button", "submit", "Submit");
  (submit as HTMLButtonElement).disabled = !session.canSubmit();
  submit.addEventListener("click", () => {
    void session.submit().then(() => render(session, root));
  });
  pane.appendChild(submit);
  pane.appendChild(el("p", "session-count",
    `Completed this session: ${session.completedThisSession}`));
  root.appendChild(pane);
}

/** Number keys answer the first unanswered visible question. */
export function installKeyboardShortcuts(session: AnnotationSession, root: HTMLElement): void {
  document.addEventListener("keydown", (event) => {
    if (session.status !== "annotating") {
      return;
    }
    const digit = Number.parseInt(event.key, 10);
    if (Number.isNaN(digit) || digit < 1) {
      return;
    }
    const visible = session.visible();
    const target = QUESTIONS.find(
      (q) => visible.has(q.qid) && session.values[q.qid] == null,
    );
    if (!target || digit > target.options.length) {
      return;
    }
    session.answer(target.qid, target.options[digit - 1]!);
    render(session, root);
  });
}

function maybeShowNsfwBanner(root: HTMLElement): void {
  if (window.sessionStorage.getItem(NSFW_BANNER_KEY)) {
    return;
  }
  window.sessionStorage.setItem(NSFW_BANNER_KEY, "1");
  const banner = el(
    "div",
    "nsfw-banner",
    "Heads up: automated filtering removes most explicit content, but some " +
      "may slip through. Use the report button if you encounter any.",
  );
  const dismiss = el("button", "dismiss", "Got it");
  dismiss.addEventListener("click", () => banner.remove());
  banner.appendChild(dismiss);
  root.appendChild(banner);
}

function el(tag: string, className: string, text: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text) {
    node.textContent = text;
  }
  return node;
}
