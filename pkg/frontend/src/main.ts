import { ApiClient } from "./api.js";
import { AnnotationSession } from "./controller.js";
import { installKeyboardShortcuts, render } from "./ui.js";

const WORKER_KEY = "sensepipe-worker-id";

function workerId(): string {
  let id = window.localStorage.getItem(WORKER_KEY);
  if (!id) {
    id = `worker-${Math.random().toString(36).slice(2, 10)}`;
    window.localStorage.setItem(WORKER_KEY, id);
  }
  return id;
}

const root = document.getElementById("app");
if (root) {
  const session = new AnnotationSession(new ApiClient(""), workerId());
  installKeyboardShortcuts(session, root);
  void session.start().then(() => render(session, root));
}
